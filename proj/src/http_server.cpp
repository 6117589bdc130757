#include "lunabell/errors.hpp"
#include "lunabell/service.hpp"

#include "httplib.h"

#include <atomic>
#include <condition_variable>
#include <deque>
#include <fmt/format.h>

namespace lunabell::service {

namespace {

int status_for(const json &reply) {
  if (reply.value("type", "") != "error")
    return 200;
  const auto c = reply.value("code", "");
  if (c == code::unknown_session)
    return 404;
  if (c == code::bad_message)
    return 400;
  return 409;
}

void send_json(httplib::Response &res, const json &reply) {
  res.status = status_for(reply);
  res.set_content(reply.dump(), "application/json");
}

/// Messages queued for one Server-Sent-Events connection.
struct EventQueue {
  std::mutex mutex;
  std::condition_variable cv;
  std::deque<json> messages;
  std::uint64_t subscription{0};
};

std::string sse_frame(const json &m) {
  std::string frame;
  if (m.contains("seq"))
    frame += fmt::format("id: {}\n", m.at("seq").get<std::uint64_t>());
  frame += fmt::format("event: {}\ndata: {}\n\n", m.at("type").get<std::string>(), m.dump());
  return frame;
}

} // namespace

struct HttpServer::Impl {
  explicit Impl(SessionService &s) : service(s) {}
  SessionService &service;
  httplib::Server server;
  std::atomic<bool> stopping{false};
};

HttpServer::HttpServer(SessionService &service) : impl_(std::make_unique<Impl>(service)) {
  auto &srv = impl_->server;
  Impl *impl = impl_.get();

  srv.Get("/api/health", [](const httplib::Request &, httplib::Response &res) {
    res.set_content(json{{"ok", true}, {"protocol", kProtocolVersion}}.dump(), "application/json");
  });

  srv.Post("/api/message", [impl](const httplib::Request &req, httplib::Response &res) {
    const json m = json::parse(req.body, nullptr, false);
    if (m.is_discarded()) {
      send_json(res, error_message(code::bad_message, "body is not valid JSON"));
      return;
    }
    send_json(res, impl->service.handle(m));
  });

  srv.Get(R"(/api/sessions/([^/]+)/report)", [impl](const httplib::Request &req, httplib::Response &res) {
    send_json(res, impl->service.handle({{"type", "report"}, {"session_id", req.matches[1].str()}}));
  });

  srv.Get(R"(/api/sessions/([^/]+)/events)", [impl](const httplib::Request &req, httplib::Response &res) {
    const std::string session_id = req.matches[1].str();
    const std::string client_id = req.has_param("client_id") ? req.get_param_value("client_id") : "";
    auto queue = std::make_shared<EventQueue>();
    try {
      queue->subscription = impl->service.subscribe(session_id, [queue](const json &m) {
        {
          std::lock_guard lock(queue->mutex);
          queue->messages.push_back(m);
        }
        queue->cv.notify_all();
      });
    } catch (const std::out_of_range &) {
      send_json(res, error_message(code::unknown_session, fmt::format("no session '{}'", session_id)));
      return;
    }
    res.set_header("Cache-Control", "no-cache");
    res.set_chunked_content_provider(
        "text/event-stream",
        [impl, queue](std::size_t, httplib::DataSink &sink) {
          std::deque<json> batch;
          {
            std::unique_lock lock(queue->mutex);
            queue->cv.wait_for(lock, std::chrono::milliseconds(500), [&] { return !queue->messages.empty(); });
            batch.swap(queue->messages);
          }
          if (impl->stopping)
            return false;
          if (batch.empty()) {
            const std::string ping = ": keep-alive\n\n";
            return sink.write(ping.data(), ping.size());
          }
          for (const auto &m : batch) {
            const auto frame = sse_frame(m);
            if (!sink.write(frame.data(), frame.size()))
              return false;
            if (m.at("type") == "report") {
              sink.done();
              return true;
            }
          }
          return true;
        },
        [impl, queue, session_id, client_id](bool) {
          impl->service.unsubscribe(session_id, queue->subscription);
          if (!client_id.empty() && !impl->stopping)
            impl->service.client_disconnected(session_id, client_id);
        });
  });
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string &host, int port) {
  if (port == 0) {
    const int bound = impl_->server.bind_to_any_port(host);
    if (bound < 0)
      throw Error(fmt::format("cannot bind {}", host));
    return bound;
  }
  if (!impl_->server.bind_to_port(host, port))
    throw Error(fmt::format("cannot bind {}:{}", host, port));
  return port;
}

void HttpServer::listen() {
  if (!impl_->server.listen_after_bind() && !impl_->stopping)
    throw Error("HTTP server stopped unexpectedly");
}

void HttpServer::stop() {
  impl_->stopping = true;
  impl_->server.stop();
}

} // namespace lunabell::service
