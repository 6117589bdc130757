#include "lunabell/analysis.hpp"
#include "lunabell/config.hpp"
#include "lunabell/errors.hpp"
#include "lunabell/linkbudget.hpp"
#include "lunabell/service.hpp"
#include "lunabell/session.hpp"
#include "lunabell/spacetime.hpp"
#include "lunabell/tagfile.hpp"
#include "lunabell/tagstream.hpp"

#include "CLI11.hpp"

#include <chrono>
#include <csignal>
#include <fmt/format.h>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <thread>

using namespace lunabell;

namespace {

struct RunOptions {
  std::string config;
  std::string preset;
  std::optional<std::uint64_t> seed;
  std::optional<double> duration_s;
};

void add_run_options(CLI::App *cmd, RunOptions &o) {
  cmd->add_option("--config", o.config, "key=value config file (overrides the preset)");
  cmd->add_option("--preset", o.preset, "scenario preset")
      ->check(CLI::IsMember(session::preset_config_names()));
  cmd->add_option("--seed", o.seed, "random seed");
  cmd->add_option("--duration", o.duration_s, "duration in seconds");
}

session::SessionConfig resolve(const RunOptions &o, std::string_view default_preset) {
  const auto base = session::preset_config(o.preset.empty() ? default_preset : std::string_view(o.preset));
  auto c = o.config.empty() ? base : session::load_config(o.config, base);
  if (o.seed)
    c.seed = *o.seed;
  if (o.duration_s)
    c.duration_s = *o.duration_s;
  c.validate();
  return c;
}

int cmd_simulate(const RunOptions &o, const std::string &out, bool kv) {
  auto c = resolve(o, "paper_lab_103db");
  const auto r = session::run_headless(c, out);
  std::cout << (kv ? r.report.to_kv() : r.report.to_text());
  if (!out.empty())
    std::cerr << "run written to " << out << '\n';
  return 0;
}

int cmd_replay(const std::string &dir, bool kv) {
  const auto r = session::run_replay(dir);
  std::cout << (kv ? r.report.to_kv() : r.report.to_text());
  const auto kv_path = std::filesystem::path(dir) / session::artifact::report_kv;
  std::ifstream in(kv_path);
  if (!in) {
    std::cerr << "no " << session::artifact::report_kv << " to compare against\n";
    return 0;
  }
  std::string line, stored;
  while (std::getline(in, line))
    if (line.rfind("wall_time_s=", 0) != 0)
      stored += line + '\n';
  if (stored != r.report.to_kv(false)) {
    std::cerr << "replayed report differs from the stored report\n";
    return 2;
  }
  std::cerr << "replay matches stored report (hash " << r.report.hash() << ")\n";
  return 0;
}

int cmd_serve(const RunOptions &o, const std::string &listen, const std::string &out) {
  service::SessionService::Options opts;
  opts.config = resolve(o, "interactive_90db");
  opts.runs_dir = out;
  service::SessionService svc(opts);
  service::HttpServer server(svc);

  const auto colon = listen.rfind(':');
  if (colon == std::string::npos)
    throw InvalidArgument(fmt::format("--listen expects HOST:PORT, got '{}'", listen));
  const std::string host = listen.substr(0, colon);
  const int port = server.bind(host, std::stoi(listen.substr(colon + 1)));

  // Signals are taken by a dedicated thread so the server can stop cleanly.
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
  std::thread waiter([&] {
    int sig = 0;
    sigwait(&set, &sig);
    server.stop();
  });

  std::cerr << fmt::format("serving {} ({:.1f} dB pair loss) on http://{}:{}\n", opts.config.preset,
                           opts.config.pair_loss_db(), host, port);
  server.listen();
  pthread_kill(waiter.native_handle(), SIGTERM);
  waiter.join();
  for (const auto &id : svc.session_ids()) {
    const auto live = svc.session(id);
    if (live->state() != session::LiveState::closed)
      svc.handle({{"type", "report"}, {"session_id", id}, {"close", true}});
  }
  return 0;
}

int cmd_budget(const std::string &preset, const std::string &config, double divergence, double distance,
               double aperture) {
  if (divergence > 0.0 || distance > 0.0 || aperture > 0.0) {
    const double db = linkbudget::geometric_loss_db({divergence, distance, aperture});
    std::cout << fmt::format("geometric_loss_db={:.4f}\ntransmittance={:.6e}\n", db, linkbudget::transmittance(db));
    return 0;
  }
  linkbudget::LinkScenario s;
  if (!config.empty())
    s = linkbudget::scenario_total(session::load_config(config).arms);
  else
    s = linkbudget::preset(preset);
  std::cout << linkbudget::render_report(s);
  return 0;
}

int cmd_spacetime(double delta_t, double system_delay, double reaction, bool exact) {
  spacetime::TimingBudget t{reaction, system_delay, delta_t};
  spacetime::GeometryConfig g;
  g.use_paper_rounding = !exact;
  std::cout << spacetime::window_report(t, g);
  return 0;
}

int cmd_coincide(const std::string &alice, const std::string &bob, std::uint64_t window, const std::string &out) {
  tagstream::TagReader ra(alice);
  tagstream::TagReader rb(bob);
  tagstream::CoincidenceMatcher matcher({window});
  auto next_bob = [&] { return rb.next(); };
  std::ofstream pairs;
  if (!out.empty()) {
    pairs.open(out);
    if (!pairs)
      throw Error(fmt::format("cannot create {}", out));
    pairs << "# alice_ps alice_channel bob_ps bob_channel delta_ps\n";
  }
  std::uint64_t found = 0;
  const auto t0 = std::chrono::steady_clock::now();
  while (auto a = ra.next()) {
    if (auto p = matcher.push_alice(*a, next_bob)) {
      ++found;
      if (pairs)
        pairs << fmt::format("{} {} {} {} {}\n", p->alice.time_ps, p->alice.channel, p->bob.time_ps,
                             p->bob.channel, p->delta_ps);
    }
  }
  while (rb.next()) {
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const auto tags = ra.records_read() + rb.records_read();
  std::cout << fmt::format("alice_tags={}\nbob_tags={}\ncoincidences={}\nwindow_ps={}\npeak_buffered={}\n"
                           "seconds={:.3f}\ntags_per_s={:.3e}\n",
                           ra.records_read(), rb.records_read(), found, window, matcher.peak_buffered(), secs,
                           secs > 0 ? static_cast<double>(tags) / secs : 0.0);
  return 0;
}

analysis::SettingCounts read_counts(const std::string &path) {
  std::ifstream in(path);
  if (!in)
    throw Error(fmt::format("cannot open {}", path));
  analysis::SettingCounts c;
  std::string line;
  std::size_t filled = 0, line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#')
      continue;
    std::istringstream ss(line);
    int a = 0, b = 0;
    analysis::OutcomeCounts o;
    if (!(ss >> a >> b >> o.pp >> o.pm >> o.mp >> o.mm) || a < 0 || a > 1 || b < 0 || b > 1)
      throw Error(fmt::format("{}:{}: expected 'a b N++ N+- N-+ N--'", path, line_no));
    c.at(a, b) = o;
    ++filled;
  }
  if (filled != 4)
    throw Error(fmt::format("{}: expected 4 setting rows, got {}", path, filled));
  return c;
}

int cmd_analyze(const std::string &counts, int bootstrap, std::uint64_t seed, bool plan, double visibility,
                double rate, double loss, double k) {
  if (plan) {
    const double t = analysis::time_to_violation(visibility, rate, loss, k);
    std::cout << fmt::format("visibility={}\npair_rate_per_s={}\npair_loss_db={}\nk_sigma={}\n"
                             "time_to_violation_s={:.6g}\ntime_to_violation_h={:.4f}\n"
                             "expected_coincidences={:.1f}\n",
                             visibility, rate, loss, k, t, t / 3600.0,
                             analysis::expected_coincidences(rate, loss, t));
    return 0;
  }
  if (counts.empty())
    throw InvalidArgument("analyze needs a counts file or --plan");
  const auto c = read_counts(counts);
  const auto r = analysis::chsh(c);
  for (std::size_t i = 0; i < 4; ++i)
    std::cout << fmt::format("E_{}{}={:.6f} {:.6f} {}\n", i / 2, i % 2, r.correlations[i].value,
                             r.correlations[i].sigma, r.correlations[i].n);
  std::cout << fmt::format("S={:.6f}\nS_sigma={:.6f}\nS_convention={}\nlocal_bound={}\n", r.s_value, r.sigma,
                           r.convention, analysis::local_bound_oracle());
  if (bootstrap > 0)
    std::cout << fmt::format("S_sigma_bootstrap={:.6f}\n", analysis::bootstrap_sigma(c, bootstrap, seed));
  return 0;
}

int cmd_histogram(const std::string &alice, const std::string &bob, double bin, double span, bool all_pairs,
                  std::uint64_t window) {
  const auto a = tagstream::read_tags(alice);
  const auto b = tagstream::read_tags(bob);
  const auto h = all_pairs ? tagstream::delta_histogram(a, b, bin, span)
                           : tagstream::delta_histogram(tagstream::find_coincidences(a, b, {window}), bin, span);
  for (std::size_t i = 0; i < h.counts.size(); ++i)
    std::cout << fmt::format("{:>10.1f} {}\n", h.bin_center(i), h.counts[i]);
  std::cout << fmt::format("# entries={} underflow={} overflow={}\n", h.entries(), h.underflow, h.overflow);
  if (auto w = h.fwhm())
    std::cout << fmt::format("# fwhm_ps={:.2f}\n", *w);
  else
    std::cout << "# fwhm_ps=undefined\n";
  return 0;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Earth-Moon Bell test simulator"};
  app.require_subcommand(1);

  RunOptions sim_opts;
  std::string sim_out;
  bool sim_kv = false;
  auto *simulate = app.add_subcommand("simulate", "headless run");
  add_run_options(simulate, sim_opts);
  simulate->add_option("--out", sim_out, "write the run directory here");
  simulate->add_flag("--kv", sim_kv, "print the machine-readable report");

  std::string replay_dir;
  bool replay_kv = false;
  auto *replay = app.add_subcommand("replay", "recompute a report from a run directory");
  replay->add_option("run_dir", replay_dir)->required()->check(CLI::ExistingDirectory);
  replay->add_flag("--kv", replay_kv, "print the machine-readable report");

  RunOptions serve_opts;
  std::string listen = "127.0.0.1:8080";
  std::string serve_out;
  auto *serve = app.add_subcommand("serve", "live session service");
  add_run_options(serve, serve_opts);
  serve->add_option("--listen", listen, "HOST:PORT");
  serve->add_option("--out", serve_out, "persist closed sessions under this directory");

  std::string budget_preset = "paper_table1";
  std::string budget_config;
  double divergence = 0.0, distance = 0.0, aperture = 0.0;
  auto *budget = app.add_subcommand("budget", "link budget table");
  budget->add_option("--preset", budget_preset)->check(CLI::IsMember(linkbudget::preset_names()));
  budget->add_option("--config", budget_config, "take the arms from a session config");
  budget->add_option("--divergence", divergence, "full beam divergence, rad");
  budget->add_option("--distance", distance, "distance, m");
  budget->add_option("--aperture", aperture, "receiver diameter, m");

  double delta_t = 0.5, system_delay = 0.05, reaction = 0.45;
  bool exact = false;
  auto *st = app.add_subcommand("spacetime", "loophole windows");
  st->add_option("--delta-t", delta_t, "choice-to-prepared budget, s");
  st->add_option("--system-delay", system_delay, "s");
  st->add_option("--reaction", reaction, "s");
  st->add_flag("--exact-light-time", exact, "use side/c instead of the rounded 1.28 s");

  std::string co_alice, co_bob, co_out;
  std::uint64_t co_window = 500;
  auto *coincide = app.add_subcommand("coincide", "pair two tag files");
  coincide->add_option("alice", co_alice)->required()->check(CLI::ExistingFile);
  coincide->add_option("bob", co_bob)->required()->check(CLI::ExistingFile);
  coincide->add_option("--window", co_window, "ps");
  coincide->add_option("--out", co_out, "pair file");

  std::string counts_path;
  int bootstrap = 0;
  std::uint64_t an_seed = 1;
  bool plan = false;
  double vis = 0.806, rate = 1e9, loss = 103.0, k = 3.0;
  auto *analyze = app.add_subcommand("analyze", "CHSH from counts, or plan a run");
  analyze->add_option("counts", counts_path, "rows 'a b N++ N+- N-+ N--'");
  analyze->add_option("--bootstrap", bootstrap, "bootstrap resamples");
  analyze->add_option("--seed", an_seed);
  analyze->add_flag("--plan", plan, "time needed for a k-sigma violation");
  analyze->add_option("--visibility", vis);
  analyze->add_option("--rate", rate, "pairs/s");
  analyze->add_option("--loss", loss, "pair loss, dB");
  analyze->add_option("--sigma", k, "k");

  std::string h_alice, h_bob;
  double h_bin = 10.0, h_span = 500.0;
  bool h_all = false;
  std::uint64_t h_window = 500;
  auto *histogram = app.add_subcommand("histogram", "arrival-time difference histogram");
  histogram->add_option("alice", h_alice)->required()->check(CLI::ExistingFile);
  histogram->add_option("bob", h_bob)->required()->check(CLI::ExistingFile);
  histogram->add_option("--bin", h_bin, "bin width, ps");
  histogram->add_option("--span", h_span, "half range, ps");
  histogram->add_option("--window", h_window, "coincidence window, ps");
  histogram->add_flag("--all-pairs", h_all, "every tag pair in range, not just coincidences");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*simulate)
      return cmd_simulate(sim_opts, sim_out, sim_kv);
    if (*replay)
      return cmd_replay(replay_dir, replay_kv);
    if (*serve)
      return cmd_serve(serve_opts, listen, serve_out);
    if (*budget)
      return cmd_budget(budget_preset, budget_config, divergence, distance, aperture);
    if (*st)
      return cmd_spacetime(delta_t, system_delay, reaction, exact);
    if (*coincide)
      return cmd_coincide(co_alice, co_bob, co_window, co_out);
    if (*analyze)
      return cmd_analyze(counts_path, bootstrap, an_seed, plan, vis, rate, loss, k);
    if (*histogram)
      return cmd_histogram(h_alice, h_bob, h_bin, h_span, h_all, h_window);
  } catch (const std::exception &e) {
    std::cerr << "lunabell: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
