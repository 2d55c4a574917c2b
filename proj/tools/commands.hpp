#pragma once

// Subcommand bodies. Each reads the resolved RunConfig, writes its outputs
// and a resolved-config copy into the output directory, and returns the
// process exit code (0, or 1 when --strict and a check failed). Errors
// propagate as exceptions and are mapped to exit codes by main.

#include "run_config.hpp"

#include "energyflow/energy_model.hpp"
#include "energyflow/reward.hpp"
#include "energyflow/sampler.hpp"
#include "energyflow/softrl.hpp"
#include "energyflow/synth_env.hpp"
#include "energyflow/theory_lab.hpp"
#include "energyflow/trainer.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <string>
#include <vector>

namespace energyflow::cli {

using json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;

struct Context {
  RunConfig cfg;
  bool strict = false;
};

// ---------------------------------------------------------------------------
// plumbing

inline std::filesystem::path out_dir(const RunConfig& cfg) {
  const std::filesystem::path dir = cfg.str("out");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::ios_base::failure("cannot create output directory " + dir.string() + ": " + ec.message());
  return dir;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw std::ios_base::failure("cannot open for writing: " + path.string());
  os << text;
  if (!os) throw std::ios_base::failure("error writing: " + path.string());
}

inline void write_json(const std::filesystem::path& path, json j) {
  j["schema_version"] = kSchemaVersion;
  write_text(path, j.dump(2) + "\n");
}

inline void write_resolved(const RunConfig& cfg, const std::string& command) {
  write_text(out_dir(cfg) / ("resolved_" + command + ".txt"), cfg.resolved());
}

inline std::string demos_path(const RunConfig& cfg) {
  const std::string& p = cfg.str("demos.path");
  return p.empty() ? (std::filesystem::path(cfg.str("out")) / "demos.csv").string() : p;
}

inline std::string checkpoint_path(const RunConfig& cfg) {
  const std::string& p = cfg.str("model.checkpoint");
  return p.empty() ? (std::filesystem::path(cfg.str("out")) / "model.ckpt").string() : p;
}

inline void require_file(const std::string& path, const std::string& what) {
  if (!std::filesystem::exists(path)) throw missing_artifact(what + " not found: " + path);
}

/// Runs a module validator, re-raising its complaint as a config error.
template <typename Fn>
void validated(const std::string& section, Fn&& fn) {
  try {
    fn();
  } catch (const std::invalid_argument& e) {
    throw config_error(section + ": " + e.what());
  }
}

inline NoiseSchedule schedule_from(const RunConfig& c) {
  NoiseSchedule s{c.real("schedule.sigma_min"), c.real("schedule.sigma_max"), c.real("schedule.horizon")};
  validated("schedule", [&] { s.validate(); });
  return s;
}

inline EnergyNetConfig net_config_from(const RunConfig& c, int state_dim, int action_dim) {
  EnergyNetConfig n;
  n.action_dim = action_dim;
  n.state_dim = state_dim;
  n.time_frequencies = static_cast<int>(c.integer("model.time_frequencies"));
  n.time_freq_min = c.real("model.time_freq_min");
  n.time_freq_max = c.real("model.time_freq_max");
  n.cond_hidden = static_cast<int>(c.integer("model.cond_hidden"));
  n.trunk_hidden = static_cast<int>(c.integer("model.trunk_hidden"));
  n.trunk_blocks = static_cast<int>(c.integer("model.trunk_blocks"));
  n.head_hidden = static_cast<int>(c.integer("model.head_hidden"));
  n.horizon = c.real("schedule.horizon");
  n.output_scaling = c.boolean("model.output_scaling");
  n.scale_sigma_min = c.real("schedule.sigma_min");
  n.scale_sigma_max = c.real("schedule.sigma_max");
  validated("model", [&] { n.validate(); });
  return n;
}

inline TrainConfig train_config_from(const RunConfig& c) {
  TrainConfig t;
  t.total_steps = c.integer("train.steps");
  t.learning_rate = c.real("train.lr");
  t.weight_decay = c.real("train.weight_decay");
  t.batch_size = static_cast<int>(c.integer("train.batch"));
  t.warmup_steps = std::min(c.integer("train.warmup"), t.total_steps);
  t.grad_clip_norm = c.real("train.clip");
  t.seed = c.u64("seed");
  t.threads = static_cast<int>(c.integer("threads"));
  validated("train", [&] { t.validate(); });
  return t;
}

inline OdeConfig ode_from(const RunConfig& c, double horizon) {
  OdeConfig o{static_cast<int>(c.integer("ode.steps")), c.real("ode.gamma")};
  validated("ode", [&] { o.validate(horizon); });
  return o;
}

inline RewardConfig reward_config_from(const RunConfig& c, double horizon) {
  RewardConfig r;
  r.gamma = c.real("reward.gamma");
  r.baseline_samples = static_cast<int>(c.integer("reward.samples"));
  r.alpha = c.real("reward.alpha");
  r.energy_scale = c.real("reward.energy_scale");
  validated("reward", [&] { r.validate(horizon); });
  return r;
}

inline SacConfig sac_config_from(const RunConfig& c) {
  SacConfig s;
  s.hidden = c.ints("sac.hidden");
  s.batch_size = static_cast<int>(c.integer("sac.batch"));
  s.actor_lr = s.critic_lr = s.alpha_lr = c.real("sac.lr");
  s.discount = c.real("sac.discount");
  s.polyak = c.real("sac.polyak");
  s.initial_alpha = c.real("sac.initial_alpha");
  s.total_steps = c.integer("sac.steps");
  s.random_steps = s.update_after = c.integer("sac.random_steps");
  s.eval_every = c.integer("sac.eval_every");
  s.eval_episodes = static_cast<int>(c.integer("sac.eval_episodes"));
  validated("sac", [&] { s.validate(); });
  return s;
}

inline TheoryConfig theory_config_from(const RunConfig& c) {
  TheoryConfig t;
  t.dims = c.ints("theory.dims");
  t.shifts = c.reals("theory.shifts");
  t.seeds = static_cast<int>(c.integer("theory.seeds"));
  t.n_train = static_cast<int>(c.integer("theory.n_train"));
  t.n_eval = static_cast<int>(c.integer("theory.n_eval"));
  t.features = static_cast<int>(c.integer("theory.features"));
  t.hidden = static_cast<int>(c.integer("theory.hidden"));
  t.extra_scale = c.real("theory.extra_scale");
  t.ridge = c.real("theory.ridge");
  t.noise_std = c.real("theory.noise");
  t.seed = c.u64("seed");
  validated("theory", [&] { t.validate(); });
  return t;
}

inline RealVector parse_state(const RunConfig& c, int dim) {
  const std::vector<double> v = c.reals("sample.state");
  if (static_cast<int>(v.size()) != dim)
    throw config_error("sample.state: expected " + std::to_string(dim) + " comma-separated values");
  return Eigen::Map<const RealVector>(v.data(), dim);
}

inline json vec_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline json mat_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) rows.push_back(vec_json(m.row(r).transpose()));
  return rows;
}

struct Loaded {
  DemoDataset demos;
  EnergyNet net;
};

inline Loaded load_artifacts(const RunConfig& c) {
  const std::string dp = demos_path(c), cp = checkpoint_path(c);
  require_file(dp, "dataset");
  require_file(cp, "checkpoint");
  DemoDataset d = DemoDataset::load_csv(dp);
  EnergyNet net = EnergyNet::load(cp);
  if (net.state_dim() != d.state_dim() || net.action_dim() != d.action_dim())
    throw config_error("checkpoint dimensions do not match the dataset");
  return {std::move(d), std::move(net)};
}

/// Raw states drawn uniformly from the demo state box, for evaluation.
inline std::vector<RealVector> eval_states(int count, int dim, std::uint64_t seed) {
  Rng rng(seed, 0x6576616c73ULL);
  const auto sampler = uniform_box_sampler(dim);
  std::vector<RealVector> out;
  for (int i = 0; i < count; ++i) out.push_back(sampler(rng));
  return out;
}

/// The reference expert in the dataset's standardized units; only defined
/// for datasets drawn from it.
inline std::optional<ExpertSpec> standardized_expert(const RunConfig& c, const DemoDataset& d) {
  if (c.str("demos.source") != "expert") return std::nullopt;
  return standardized(reference_expert(expert_kind_from_string(c.str("expert.kind"))), d.stats);
}

// ---------------------------------------------------------------------------
// subcommands

inline int cmd_gen_demos(const Context& ctx) {
  const RunConfig& c = ctx.cfg;
  const std::uint64_t seed = c.u64("seed");
  const std::string source = c.str("demos.source");
  DemoDataset d;
  std::string label;
  Rng rng(seed, 0x64656d6fULL);
  if (source == "expert") {
    const long n = c.integer("demos.n");
    if (n < 2) throw config_error("demos.n: must be >= 2 (got " + std::to_string(n) + ")");
    ExpertKind kind;
    validated("expert.kind", [&] { kind = expert_kind_from_string(c.str("expert.kind")); });
    d = generate_demos(reference_expert(kind), n, uniform_box_sampler(2), rng);
    label = to_string(kind);
  } else if (source == "mdp") {
    const long episodes = c.integer("demos.episodes");
    if (episodes < 1) throw config_error("demos.episodes: must be >= 1");
    const GoalMdp mdp;
    d = generate_mdp_demos(mdp, goal_expert(mdp), static_cast<int>(episodes), rng);
    label = "mdp";
  } else {
    throw config_error("demos.source: expected expert or mdp, got '" + source + "'");
  }
  out_dir(c);
  write_resolved(c, "gen-demos");
  d.save_csv(demos_path(c), label);
  write_json(std::filesystem::path(c.str("out")) / "demos_stats.json",
             {{"rows", d.size()},
              {"source", label},
              {"seed", seed},
              {"state_mean", vec_json(d.stats.state_mean)},
              {"state_std", vec_json(d.stats.state_std)},
              {"action_mean", vec_json(d.stats.action_mean)},
              {"action_std", vec_json(d.stats.action_std)}});
  std::cout << "wrote " << d.size() << " demonstrations to " << demos_path(c) << "\n";
  return 0;
}

inline int cmd_train(const Context& ctx) {
  const RunConfig& c = ctx.cfg;
  const std::string dp = demos_path(c);
  require_file(dp, "dataset");
  const NoiseSchedule sched = schedule_from(c);
  const TrainConfig tcfg = train_config_from(c);
  const DemoDataset d = DemoDataset::load_csv(dp);
  const EnergyNetConfig ncfg = net_config_from(c, d.state_dim(), d.action_dim());
  out_dir(c);
  write_resolved(c, "train");
  Rng init(c.u64("seed"), 0x696e6974ULL);
  EnergyNet net = EnergyNet::init(init, ncfg);
  const TrainReport rep = train(net, sched, d, tcfg);
  net.save(checkpoint_path(c));
  const auto dir = std::filesystem::path(c.str("out"));
  rep.write_csv((dir / "train_log.csv").string());
  write_json(dir / "train_report.json", {{"steps", tcfg.total_steps},
                                         {"parameters", net.param_count()},
                                         {"final_loss_average", rep.final_loss_average},
                                         {"checkpoint", checkpoint_path(c)}});
  std::cout << "trained " << tcfg.total_steps << " steps, final loss " << rep.final_loss_average << "\n";
  return 0;
}

inline int cmd_sample(const Context& ctx) {
  const RunConfig& c = ctx.cfg;
  Loaded l = load_artifacts(c);
  const NoiseSchedule sched = schedule_from(c);
  const OdeConfig ode = ode_from(c, sched.horizon);
  const long n = c.integer("sample.n");
  if (n < 1) throw config_error("sample.n: must be >= 1");
  const RealVector s_raw = parse_state(c, l.demos.state_dim());
  out_dir(c);
  write_resolved(c, "sample");
  Rng rng(c.u64("seed"), 0x73616d70ULL);
  const RealVector s = l.demos.stats.standardize_state(s_raw);
  const SampleBatch b = sample_batch(l.net, sched, s.replicate(1, n), ode, rng);
  Eigen::MatrixXd raw(b.actions.rows(), n);
  for (Eigen::Index i = 0; i < n; ++i) raw.col(i) = l.demos.stats.destandardize_action(b.actions.col(i));

  const auto dir = std::filesystem::path(c.str("out"));
  std::ofstream os(dir / "samples.csv");
  if (!os) throw std::ios_base::failure("cannot open samples.csv for writing");
  for (Eigen::Index i = 0; i < raw.rows(); ++i) os << "a" << i << ",";
  os << "energy\n" << std::setprecision(17);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = 0; i < raw.rows(); ++i) os << raw(i, j) << ",";
    os << b.energies[j] << "\n";
  }
  if (!os) throw std::ios_base::failure("error writing samples.csv");

  const RealVector m = raw.rowwise().mean();
  const Eigen::MatrixXd centered = raw.colwise() - m;
  const Eigen::MatrixXd cov = centered * centered.transpose() / std::max<double>(1.0, static_cast<double>(n - 1));
  json j{{"samples", n}, {"state", vec_json(s_raw)}, {"ode_steps", ode.steps}, {"gamma", ode.gamma},
         {"mean", vec_json(m)}, {"covariance", mat_json(cov)}};
  if (c.str("demos.source") == "expert") {
    const ExpertSpec e = reference_expert(expert_kind_from_string(c.str("expert.kind")));
    j["expert_mean"] = vec_json(e.mean(s_raw));
    if (e.kind == ExpertKind::gaussian) j["expert_covariance"] = mat_json(e.cov_diag.asDiagonal().toDenseMatrix());
  }
  write_json(dir / "sample_report.json", j);
  std::cout << "wrote " << n << " samples\n";
  return 0;
}

inline int cmd_reward(const Context& ctx) {
  const RunConfig& c = ctx.cfg;
  Loaded l = load_artifacts(c);
  const NoiseSchedule sched = schedule_from(c);
  const RewardConfig rcfg = reward_config_from(c, sched.horizon);
  const long rows = std::min<long>(c.integer("reward.rows"), l.demos.size());
  const int n_states = static_cast<int>(c.integer("reward.states"));
  const int grid_n = static_cast<int>(c.integer("reward.grid"));
  if (rows < 0 || n_states < 1 || grid_n < 2) throw config_error("reward: rows >= 0, states >= 1 and grid >= 2 required");
  out_dir(c);
  write_resolved(c, "reward");
  const EnergyReward<EnergyNet> reward(l.net, rcfg, c.u64("seed"), sched.horizon);
  const auto dir = std::filesystem::path(c.str("out"));

  const Eigen::MatrixXd a = l.demos.actions.leftCols(rows), s = l.demos.states.leftCols(rows);
  const Eigen::RowVectorXd raw = reward.raw_batch(a, s), cen = reward.centered_batch(a, s);
  std::ofstream os(dir / "rewards.csv");
  if (!os) throw std::ios_base::failure("cannot open rewards.csv for writing");
  os << "index,raw,centered\n" << std::setprecision(17);
  for (Eigen::Index i = 0; i < rows; ++i) os << i << "," << raw[i] << "," << cen[i] << "\n";
  if (!os) throw std::ios_base::failure("error writing rewards.csv");

  json j{{"rows", rows}, {"gamma", rcfg.gamma}, {"reference_actions", rcfg.baseline_samples},
         {"mean_raw", rows ? raw.mean() : 0.0}, {"mean_centered", rows ? cen.mean() : 0.0}};
  if (const auto expert = standardized_expert(c, l.demos)) {
    std::vector<RealVector> states;
    for (const RealVector& sr : eval_states(n_states, l.demos.state_dim(), c.u64("seed")))
      states.push_back(l.demos.stats.standardize_state(sr));
    const Eigen::MatrixXd grid = box_grid(l.demos.action_dim(), grid_n, -2.0, 2.0);
    const auto sweep = gamma_sweep(l.net, *expert, states, [&](const RealVector&) { return grid; }, default_gamma_sweep());
    std::ofstream gs(dir / "gamma_sweep.csv");
    if (!gs) throw std::ios_base::failure("cannot open gamma_sweep.csv for writing");
    gs << "gamma,kendall_tau\n" << std::setprecision(17);
    json arr = json::array();
    for (const auto& r : sweep) {
      gs << r.gamma << "," << r.tau << "\n";
      arr.push_back({{"gamma", r.gamma}, {"tau", r.tau}});
    }
    if (!gs) throw std::ios_base::failure("error writing gamma_sweep.csv");
    j["gamma_sweep"] = arr;
  }
  write_json(dir / "reward_report.json", j);
  std::cout << "scored " << rows << " demonstrations\n";
  return 0;
}

inline int cmd_rl(const Context& ctx) {
  const RunConfig& c = ctx.cfg;
  const SacConfig scfg = sac_config_from(c);
  const NoiseSchedule sched = schedule_from(c);
  const RewardConfig rcfg = reward_config_from(c, sched.horizon);
  std::vector<RewardMode> arms;
  validated("sac.arms", [&] {
    for (const auto& a : c.strings("sac.arms")) arms.push_back(reward_mode_from_string(a));
  });
  if (arms.empty()) throw config_error("sac.arms: no arms given");
  const int seeds = static_cast<int>(c.integer("sac.seeds"));
  if (seeds < 1) throw config_error("sac.seeds: must be >= 1");
  const double threshold = c.real("sac.success_threshold");
  bool needs_energy = false;
  for (RewardMode m : arms) needs_energy |= m == RewardMode::raw || m == RewardMode::centered || m == RewardMode::centered_plus_sparse;

  std::optional<Loaded> l;
  if (needs_energy) {
    l.emplace(load_artifacts(c));
    if (l->demos.state_dim() != 2 || l->demos.action_dim() != 2) throw config_error("rl: energy arms need a 2-d goal-task checkpoint");
  }
  out_dir(c);
  write_resolved(c, "rl");
  std::optional<EnergyReward<EnergyNet>> er;
  if (l) er.emplace(l->net, rcfg, c.u64("seed"), sched.horizon);

  const GoalMdp mdp;
  std::vector<std::pair<std::string, LearningCurve>> curves;
  json summary = json::object();
  for (RewardMode m : arms) {
    const TransitionReward r = make_transition_reward<EnergyNet>(m, mdp, er ? &*er : nullptr, l ? &l->demos.stats : nullptr);
    json arm{{"steps_to_threshold", json::array()}, {"final_success", json::array()}};
    std::vector<double> reach;
    for (int k = 0; k < seeds; ++k) {
      const std::uint64_t seed = c.u64("seed") * 1000 + static_cast<std::uint64_t>(k);
      LearningCurve curve = run_sac(mdp, r, scfg, seed);
      const long st = curve.steps_to(threshold);
      // runs that never reach the threshold count as one evaluation past the budget
      reach.push_back(st < 0 ? static_cast<double>(scfg.total_steps + scfg.eval_every) : static_cast<double>(st));
      arm["steps_to_threshold"].push_back(st);
      arm["final_success"].push_back(curve.final_success());
      curves.emplace_back(to_string(m), std::move(curve));
      std::cout << to_string(m) << " seed " << seed << ": steps to " << threshold << " = " << st << "\n";
    }
    arm["median_steps_to_threshold"] = median(reach);
    summary[to_string(m)] = arm;
  }
  const auto dir = std::filesystem::path(c.str("out"));
  write_curves_csv((dir / "rl_curves.csv").string(), curves);
  write_json(dir / "rl_summary.json", {{"arms", summary}, {"success_threshold", threshold}, {"steps", scfg.total_steps}});
  return 0;
}

inline int cmd_theory(const Context& ctx) {
  const RunConfig& c = ctx.cfg;
  const std::string suite = c.str("theory.suite");
  const auto dir = std::filesystem::path(c.str("out"));
  if (suite == "sweep") {
    const TheoryConfig tcfg = theory_config_from(c);
    out_dir(c);
    write_resolved(c, "theory");
    const SweepReport rep = run_dimension_sweep(tcfg);
    std::ofstream os(dir / "theory_trials.csv");
    if (!os) throw std::ios_base::failure("cannot open theory_trials.csv for writing");
    os << "seed,dim,shift,class,train_mse,risk,approx_error\n" << std::setprecision(17);
    for (const auto& r : rep.rows)
      os << r.seed << "," << r.dim << "," << r.shift << "," << to_string(r.kind) << "," << r.train_mse << "," << r.risk << ","
         << r.approx_error << "\n";
    if (!os) throw std::ios_base::failure("error writing theory_trials.csv");
    std::ofstream cs(dir / "theory_cells.csv");
    if (!cs) throw std::ios_base::failure("cannot open theory_cells.csv for writing");
    cs << "dim,shift,median_conservative,median_unconstrained,conservative_wins,sign_test_p,median_approx_error\n"
       << std::setprecision(17);
    for (const auto& cell : rep.cells)
      cs << cell.dim << "," << cell.shift << "," << cell.median_conservative << "," << cell.median_unconstrained << ","
         << cell.conservative_wins << "," << cell.sign_test_p << "," << cell.median_approx_error << "\n";
    if (!cs) throw std::ios_base::failure("error writing theory_cells.csv");

    const int dmax = *std::max_element(tcfg.dims.begin(), tcfg.dims.end());
    const SweepCell& top = rep.cell(dmax, rep.largest_shift);
    const bool has_d1 = std::find(tcfg.dims.begin(), tcfg.dims.end(), 1) != tcfg.dims.end();
    const double p1 = has_d1 ? rep.cell(1, rep.largest_shift).sign_test_p : 1.0;
    const bool ok = top.conservative_wins >= (8 * tcfg.seeds + 9) / 10 && rep.slope_unconstrained > rep.slope_conservative && p1 > 0.05;
    write_json(dir / "theory_report.json", {{"suite", "sweep"},
                                            {"slope_conservative", rep.slope_conservative},
                                            {"slope_unconstrained", rep.slope_unconstrained},
                                            {"largest_dim", dmax},
                                            {"largest_shift", rep.largest_shift},
                                            {"conservative_wins_at_largest", top.conservative_wins},
                                            {"seeds", tcfg.seeds},
                                            {"d1_sign_test_p", p1},
                                            {"passed", ok}});
    std::cout << "sweep: wins " << top.conservative_wins << "/" << tcfg.seeds << " at d=" << dmax << ", slopes "
              << rep.slope_conservative << " (conservative) vs " << rep.slope_unconstrained << " (unconstrained)\n";
    return ctx.strict && !ok ? 1 : 0;
  }
  if (suite == "property") {
    Loaded l = load_artifacts(c);
    const NoiseSchedule sched = schedule_from(c);
    const auto expert = standardized_expert(c, l.demos);
    if (!expert) throw config_error("theory.suite = property needs demos.source = expert");
    const int n_states = static_cast<int>(c.integer("theory.states"));
    if (n_states < 1) throw config_error("theory.states: must be >= 1");
    out_dir(c);
    write_resolved(c, "theory");
    std::vector<RealVector> states;
    for (const RealVector& sr : eval_states(n_states, l.demos.state_dim(), c.u64("seed")))
      states.push_back(l.demos.stats.standardize_state(sr));
    PropertyConfig pcfg;
    pcfg.gamma = c.real("reward.gamma");
    pcfg.states = n_states;
    pcfg.seed = c.u64("seed");
    const PropertyReport rep = run_property_suite(l.net, *expert, sched, states, pcfg);
    json checks = json::array();
    for (const auto& chk : rep.checks) {
      checks.push_back({{"name", chk.name}, {"value", chk.value}, {"threshold", chk.threshold}, {"passed", chk.passed}});
      std::cout << chk.name << " = " << chk.value << (chk.passed ? " pass" : " FAIL") << "\n";
    }
    write_json(dir / "property_report.json", {{"suite", "property"},
                                              {"checks", checks},
                                              {"cross_state_offset_std", rep.cross_state_offset_std},
                                              {"passed", rep.all_passed()}});
    return ctx.strict && !rep.all_passed() ? 1 : 0;
  }
  throw config_error("theory.suite: expected sweep or property, got '" + suite + "'");
}

}  // namespace energyflow::cli
