#include "gaterace/harness.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include "gaterace/rng.hpp"
#include "gaterace/track_io.hpp"

namespace gaterace {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json reward_weights_to_json(const RewardWeights& w) {
  return {{"prog", w.prog},         {"theta", w.theta},
          {"cmd", w.cmd},           {"cmd_delta", w.cmd_delta},
          {"vd", w.vd},             {"avoid", w.avoid},
          {"pass", w.pass},         {"crash", w.crash},
          {"b_omega", w.b_omega},   {"vd_clamped", w.vd_clamped}};
}

RewardWeights reward_weights_from_json(const json& j) {
  RewardWeights w;
  w.prog = j.value("prog", w.prog);
  w.theta = j.value("theta", w.theta);
  w.cmd = j.value("cmd", w.cmd);
  w.cmd_delta = j.value("cmd_delta", w.cmd_delta);
  w.vd = j.value("vd", w.vd);
  w.avoid = j.value("avoid", w.avoid);
  w.pass = j.value("pass", w.pass);
  w.crash = j.value("crash", w.crash);
  w.b_omega = j.value("b_omega", w.b_omega);
  w.vd_clamped = j.value("vd_clamped", w.vd_clamped);
  return w;
}

json env_config_to_json(const EnvConfig& e) {
  return {{"physics_dt", e.physics_dt},
          {"action_repeat", e.action_repeat},
          {"max_steps", e.max_steps},
          {"start_jitter", e.start_jitter},
          {"max_reset_tries", e.max_reset_tries},
          {"depth_sigma", e.depth_sigma},
          {"drone_radius", e.drone_radius},
          {"camera",
           {{"width", e.camera.width},
            {"height", e.camera.height},
            {"horizontal_fov_deg", e.camera.horizontal_fov * 180.0 / M_PI},
            {"max_range", e.camera.max_range},
            {"min_range", e.camera.min_range}}},
          {"reward", reward_weights_to_json(e.reward)}};
}

EnvConfig env_config_from_json(const json& j) {
  EnvConfig e;
  e.physics_dt = j.value("physics_dt", e.physics_dt);
  e.action_repeat = j.value("action_repeat", e.action_repeat);
  e.max_steps = j.value("max_steps", e.max_steps);
  e.start_jitter = j.value("start_jitter", e.start_jitter);
  e.max_reset_tries = j.value("max_reset_tries", e.max_reset_tries);
  e.depth_sigma = j.value("depth_sigma", e.depth_sigma);
  e.drone_radius = j.value("drone_radius", e.drone_radius);
  if (j.contains("camera")) {
    const json& c = j.at("camera");
    e.camera.width = c.value("width", e.camera.width);
    e.camera.height = c.value("height", e.camera.height);
    e.camera.horizontal_fov =
        c.value("horizontal_fov_deg", e.camera.horizontal_fov * 180.0 / M_PI) *
        M_PI / 180.0;
    e.camera.max_range = c.value("max_range", e.camera.max_range);
    e.camera.min_range = c.value("min_range", e.camera.min_range);
  }
  if (j.contains("reward")) e.reward = reward_weights_from_json(j.at("reward"));
  return e;
}

json schedule_to_json(const CurriculumSchedule& s) {
  return {{"low_speed", s.low_speed},
          {"target_speed", s.target_speed},
          {"speed_step", s.speed_step},
          {"level2_density", s.level2_density},
          {"level3_density", s.level3_density},
          {"early_xy_range", s.early_xy_range},
          {"early_z_range", s.early_z_range},
          {"full_xy_range", s.full_xy_range},
          {"full_z_range", s.full_z_range},
          {"advance_threshold", s.advance_threshold},
          {"window", s.window},
          {"start_level", s.start_level},
          {"final_level", s.final_level},
          {"one_step", s.one_step}};
}

CurriculumSchedule schedule_from_json(const json& j) {
  CurriculumSchedule s;
  s.low_speed = j.value("low_speed", s.low_speed);
  s.target_speed = j.value("target_speed", s.target_speed);
  s.speed_step = j.value("speed_step", s.speed_step);
  s.level2_density = j.value("level2_density", s.level2_density);
  s.level3_density = j.value("level3_density", s.level3_density);
  s.early_xy_range = j.value("early_xy_range", s.early_xy_range);
  s.early_z_range = j.value("early_z_range", s.early_z_range);
  s.full_xy_range = j.value("full_xy_range", s.full_xy_range);
  s.full_z_range = j.value("full_z_range", s.full_z_range);
  s.advance_threshold = j.value("advance_threshold", s.advance_threshold);
  s.window = j.value("window", s.window);
  s.start_level = j.value("start_level", s.start_level);
  s.final_level = j.value("final_level", s.final_level);
  s.one_step = j.value("one_step", s.one_step);
  return s;
}

template <typename T>
json optional_to_json(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

template <typename T>
std::optional<T> optional_from_json(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<T>();
}

json eval_settings_to_json(const EvalSettings& e) {
  return {{"trials", e.trials},
          {"seed", e.seed},
          {"interval_rollouts", e.interval_rollouts},
          {"stop_success_rate", optional_to_json(e.stop_success_rate)},
          {"density", optional_to_json(e.density)},
          {"gate_xy_range", optional_to_json(e.gate_xy_range)},
          {"gate_z_range", optional_to_json(e.gate_z_range)},
          {"v_d", optional_to_json(e.v_d)}};
}

EvalSettings eval_settings_from_json(const json& j) {
  EvalSettings e;
  e.trials = j.value("trials", e.trials);
  e.seed = j.value("seed", e.seed);
  e.interval_rollouts = j.value("interval_rollouts", e.interval_rollouts);
  e.stop_success_rate = optional_from_json<double>(j, "stop_success_rate");
  e.density = optional_from_json<int>(j, "density");
  e.gate_xy_range = optional_from_json<double>(j, "gate_xy_range");
  e.gate_z_range = optional_from_json<double>(j, "gate_z_range");
  e.v_d = optional_from_json<double>(j, "v_d");
  return e;
}

json sweep_settings_to_json(const SweepSettings& s) {
  return {{"densities", s.densities},
          {"gate_ranges", s.gate_ranges},
          {"tracks", s.tracks},
          {"trials", s.trials},
          {"seed", s.seed}};
}

SweepSettings sweep_settings_from_json(const json& j) {
  SweepSettings s;
  if (j.contains("densities")) s.densities = j.at("densities").get<std::vector<int>>();
  if (j.contains("gate_ranges")) {
    s.gate_ranges = j.at("gate_ranges").get<std::vector<double>>();
  }
  if (j.contains("tracks")) s.tracks = j.at("tracks").get<std::vector<std::string>>();
  s.trials = j.value("trials", s.trials);
  s.seed = j.value("seed", s.seed);
  return s;
}

// Stage used for evaluation episodes. The level only selects the speed
// penalty and the validation rules; it does not change the scene.
CurriculumStage eval_stage(int density, double xy, double z, double v_d,
                           double low_speed) {
  CurriculumStage st;
  st.density = density;
  st.gate_xy_range = xy;
  st.gate_z_range = z;
  st.v_d = v_d;
  st.level = v_d > low_speed ? 3 : (density > 0 ? 2 : 1);
  st.vd_penalty_enabled = st.level < 3;
  return st;
}

void append_line(const fs::path& path, const json& record) {
  std::ofstream os(path, std::ios::app);
  os << record.dump() << '\n';
}

// Drops records past the given rollout so a resumed run continues the
// stream where its checkpoint left it.
void truncate_log(const fs::path& path, std::int64_t rollouts) {
  if (!fs::exists(path)) return;
  std::ifstream is(path);
  std::vector<std::string> kept;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (json::parse(line).value("rollout", std::int64_t{0}) <= rollouts) {
      kept.push_back(line);
    }
  }
  is.close();
  std::ofstream os(path, std::ios::trunc);
  for (const std::string& l : kept) os << l << '\n';
}

}  // namespace

json run_config_to_json(const RunConfig& c) {
  return {{"name", c.name},
          {"track", c.track},
          {"seed", c.seed},
          {"ppo", ppo_config_to_json(c.ppo)},
          {"policy", policy_config_to_json(c.policy)},
          {"env", env_config_to_json(c.env)},
          {"curriculum", schedule_to_json(c.curriculum)},
          {"eval", eval_settings_to_json(c.eval)},
          {"sweep", sweep_settings_to_json(c.sweep)},
          {"checkpoint_interval", c.checkpoint_interval},
          {"output_dir", c.output_dir}};
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  c.name = j.value("name", c.name);
  c.track = j.value("track", c.track);
  c.seed = j.value("seed", c.seed);
  if (j.contains("ppo")) c.ppo = ppo_config_from_json(j.at("ppo"));
  if (j.contains("policy")) c.policy = policy_config_from_json(j.at("policy"));
  if (j.contains("env")) c.env = env_config_from_json(j.at("env"));
  if (j.contains("curriculum")) c.curriculum = schedule_from_json(j.at("curriculum"));
  if (j.contains("eval")) c.eval = eval_settings_from_json(j.at("eval"));
  if (j.contains("sweep")) c.sweep = sweep_settings_from_json(j.at("sweep"));
  c.checkpoint_interval = j.value("checkpoint_interval", c.checkpoint_interval);
  c.output_dir = j.value("output_dir", c.output_dir);
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  return run_config_from_json(load_json(path));
}

std::uint64_t run_config_hash(const RunConfig& c) {
  json j = run_config_to_json(c);
  j.erase("output_dir");
  return config_hash(j);
}

RunConfig apply_ablations(RunConfig c, const Ablations& a) {
  if (a.no_recurrent) c.policy.recurrent = false;
  if (a.no_avoid_reward) c.env.reward.avoid = 0.0;
  if (a.one_step) c.curriculum.one_step = true;
  return c;
}

fs::path output_root() {
  const char* root = std::getenv("GATERACE_OUTPUT_ROOT");
  return root && *root ? fs::path(root) : fs::path("runs");
}

fs::path run_directory(const RunConfig& c) {
  if (c.output_dir.empty()) return output_root() / c.name;
  const fs::path p(c.output_dir);
  return p.is_absolute() ? p : output_root() / p;
}

TrainerSetup make_trainer_setup(const RunConfig& c) {
  TrainerSetup s;
  s.track = load_track_by_name(c.track);
  s.ppo = c.ppo;
  s.policy = c.policy;
  s.policy.thrust_max = s.track.quad.max_thrust_accel();
  s.policy.omega_max = s.track.quad.omega_max;
  s.policy.hover_thrust = -s.track.quad.g.z();
  s.env = c.env;
  s.env.use_depth = c.policy.use_depth;
  if (s.policy.use_depth) s.policy.image_size = c.env.camera.width;
  s.curriculum = c.curriculum;
  s.seed = c.seed;
  return s;
}

json EvalReport::to_json() const {
  json trials_json = json::array();
  for (const TrialRecord& r : records) {
    trials_json.push_back({{"trial", r.trial},
                           {"scene_seed", r.scene_seed},
                           {"scene_hash", r.scene_hash},
                           {"outcome", to_string(r.outcome)},
                           {"gates_passed", r.gates_passed},
                           {"steps", r.steps},
                           {"lap_time", optional_to_json(r.lap_time)}});
  }
  return {{"track", track},
          {"trials", trials},
          {"successes", successes},
          {"success_rate", success_rate},
          {"lap_times", lap_times},
          {"mean_lap_time", optional_to_json(mean_lap_time)},
          {"density", density},
          {"gate_xy_range", gate_xy_range},
          {"gate_z_range", gate_z_range},
          {"v_d", v_d},
          {"seed", seed},
          {"records", trials_json}};
}

EvalReport summarize(const EvalOptions& o, const std::vector<TrialRecord>& records) {
  EvalReport r;
  r.track = o.track_name;
  r.trials = static_cast<int>(records.size());
  r.density = o.density;
  r.gate_xy_range = o.gate_xy_range;
  r.gate_z_range = o.gate_z_range;
  r.v_d = o.v_d;
  r.seed = o.seed;
  r.records = records;
  for (const TrialRecord& t : records) {
    if (t.outcome != DoneReason::kLapComplete) continue;
    ++r.successes;
    if (t.lap_time) r.lap_times.push_back(*t.lap_time);
  }
  r.success_rate = r.trials > 0 ? static_cast<double>(r.successes) / r.trials : 0.0;
  if (!r.lap_times.empty()) {
    r.mean_lap_time = std::accumulate(r.lap_times.begin(), r.lap_times.end(), 0.0) /
                      static_cast<double>(r.lap_times.size());
  }
  return r;
}

EvalReport evaluate(const Policy& policy, const Track& track,
                    const EvalOptions& o) {
  if (o.trials <= 0) throw std::invalid_argument("evaluate: trials must be positive");
  if (policy.config().use_depth != o.env.use_depth) {
    throw std::invalid_argument("evaluate: policy and env disagree on depth input");
  }
  const CurriculumStage stage =
      eval_stage(o.density, o.gate_xy_range, o.gate_z_range, o.v_d, 3.0);
  std::vector<TrialRecord> records(o.trials);
  const SquashBounds bounds = squash_bounds(policy.config());

  parallel_for(o.trials, o.threads, [&](int trial) {
    TrialRecord& rec = records[trial];
    rec.trial = trial;
    ScenePtr scene;
    if (o.scene_override) {
      scene = std::make_shared<const Scene>(o.scene_override(trial));
    } else {
      for (int attempt = 0; !scene; ++attempt) {
        rec.scene_seed = derive_seed(o.seed, static_cast<std::uint64_t>(trial) * 64 + attempt);
        try {
          scene = std::make_shared<const Scene>(
              make_stage_scene(track, stage, rec.scene_seed));
        } catch (const InfeasibleDensity&) {
          if (attempt >= 9) throw;
        }
      }
    }
    rec.scene_hash = scene->hash();
    EnvConfig cfg = o.env;
    cfg.fixed_start = o.start_point;
    RacingEnv env(cfg, derive_seed(rec.scene_seed, 7));
    env.set_scene(scene);
    env.set_stage(stage);
    Observation obs = env.reset();
    nn::Matrix hidden = nn::Matrix::Zero(policy.hidden_dim(), 1);
    const nn::Vector keep = nn::Vector::Ones(1);
    std::mt19937_64 unused(0);
    ActionDistribution dist;
    dist.log_std = policy.log_std();
    while (true) {
      const std::vector<const Observation*> ptr{&obs};
      const PolicyOutput out = policy.forward(
          pack_states(ptr), pack_depth(ptr, policy.depth_dim()), hidden, keep, 1);
      hidden = out.hidden;
      dist.mean = out.mean.col(0);
      const StepResult r = env.step(act(dist, unused, bounds, true).action);
      obs = r.obs;
      if (r.done != DoneReason::kRunning) {
        rec.outcome = r.done;
        rec.gates_passed = r.info.gates_passed;
        rec.lap_time = r.info.lap_time;
        rec.steps = env.episode().steps;
        break;
      }
    }
  });
  return summarize(o, records);
}

json SweepTable::to_json() const {
  json rows = json::array();
  for (std::size_t t = 0; t < tracks.size(); ++t) {
    json cells = json::array();
    for (std::size_t p = 0; p < points.size(); ++p) {
      const EvalReport& r = reports[t][p];
      cells.push_back({{"point", points[p]},
                       {"success_rate", r.success_rate},
                       {"mean_lap_time", optional_to_json(r.mean_lap_time)},
                       {"trials", r.trials}});
    }
    rows.push_back({{"track", tracks[t]}, {"cells", cells}});
  }
  return {{"axis", axis == SweepAxis::kDensity ? "density" : "gates"},
          {"points", points},
          {"tracks", tracks},
          {"rows", rows},
          {"monotonicity_violations", monotonicity_violations}};
}

std::string SweepTable::to_markdown() const {
  std::ostringstream os;
  os << "| track |";
  for (double p : points) {
    if (axis == SweepAxis::kDensity) {
      os << " density " << static_cast<int>(p) << " |";
    } else {
      os << " +-" << p << " m |";
    }
  }
  os << "\n|---|";
  for (std::size_t i = 0; i < points.size(); ++i) os << "---|";
  os << '\n';
  for (std::size_t t = 0; t < tracks.size(); ++t) {
    os << "| " << tracks[t] << " |";
    for (const EvalReport& r : reports[t]) {
      os << ' ' << static_cast<int>(std::lround(100.0 * r.success_rate)) << "% |";
    }
    os << '\n';
  }
  return os.str();
}

SweepTable sweep(const Policy& policy, SweepAxis axis, const SweepSettings& s,
                 const EnvConfig& env, const CurriculumSchedule& schedule,
                 int threads) {
  SweepTable table;
  table.axis = axis;
  table.tracks = s.tracks;
  if (axis == SweepAxis::kDensity) {
    for (int d : s.densities) table.points.push_back(d);
  } else {
    table.points = s.gate_ranges;
  }
  const double z_ratio = schedule.full_z_range / schedule.full_xy_range;
  for (const std::string& name : s.tracks) {
    const Track track = load_track_by_name(name);
    std::vector<EvalReport> row;
    for (double point : table.points) {
      EvalOptions o;
      o.track_name = name;
      o.trials = s.trials;
      o.seed = s.seed;
      o.threads = threads;
      o.env = env;
      o.v_d = schedule.target_speed;
      if (axis == SweepAxis::kDensity) {
        o.density = static_cast<int>(point);
        o.gate_xy_range = schedule.full_xy_range;
        o.gate_z_range = schedule.full_z_range;
      } else {
        o.density = schedule.level3_density;
        o.gate_xy_range = point;
        o.gate_z_range = point * z_ratio;
      }
      row.push_back(evaluate(policy, track, o));
    }
    for (std::size_t p = 1; p < row.size(); ++p) {
      if (row[p].success_rate > row[p - 1].success_rate) {
        table.monotonicity_violations.push_back(name);
        break;
      }
    }
    table.reports.push_back(std::move(row));
  }
  return table;
}

TrainResult train(const RunConfig& config, const TrainOptions& opts) {
  TrainResult result;
  result.run_dir = run_directory(config);
  const fs::path ckpt_dir = result.run_dir / "checkpoints";
  const fs::path latest = ckpt_dir / "latest.bin";
  const fs::path metrics = result.run_dir / "metrics.jsonl";
  const fs::path trace = result.run_dir / "curriculum.jsonl";
  const fs::path evals = result.run_dir / "eval.jsonl";
  fs::create_directories(ckpt_dir);

  const std::uint64_t hash = run_config_hash(config);
  const json config_json = run_config_to_json(config);
  const TrainerSetup setup = make_trainer_setup(config);
  Trainer trainer(setup);

  if (opts.resume) {
    const Checkpoint ckpt = load_checkpoint(latest);
    if (ckpt.config_hash != hash) {
      throw CheckpointError(
          "refusing to resume: checkpoint was written by a different config");
    }
    trainer.restore(ckpt.trainer);
    for (const fs::path& p : {metrics, trace, evals}) {
      truncate_log(p, ckpt.trainer.rollouts);
    }
  } else {
    for (const fs::path& p : {metrics, trace, evals}) fs::remove(p);
    save_json(result.run_dir / "config.json", config_json);
  }

  auto save = [&]() {
    Checkpoint c;
    c.config_hash = hash;
    c.run_config = config_json;
    c.policy = trainer.policy().config();
    c.trainer = trainer.snapshot();
    const fs::path numbered =
        ckpt_dir / ("ckpt_" + std::to_string(trainer.rollouts()) + ".bin");
    save_checkpoint(numbered, c);
    fs::copy_file(numbered, latest, fs::copy_options::overwrite_existing);
    result.last_checkpoint = numbered;
  };

  while (!trainer.finished()) {
    if (opts.stop_after_rollouts && trainer.rollouts() >= *opts.stop_after_rollouts) {
      break;
    }
    const CurriculumStage stage = trainer.curriculum().stage();
    json record = trainer.iterate();
    append_line(metrics, record);
    if (record.at("advanced").get<bool>()) {
      const CurriculumEvent& ev = trainer.curriculum().events().back();
      append_line(trace, {{"rollout", trainer.rollouts()},
                          {"step", ev.step},
                          {"from", ev.from_level},
                          {"to", ev.to_level},
                          {"v_d", ev.v_d},
                          {"success_rate", ev.success_rate}});
    }
    if (opts.verbose) {
      std::cerr << "rollout " << trainer.rollouts() << " step " << trainer.steps()
                << " level " << stage.level << " sr "
                << record.at("success_rate").get<double>() << " reward "
                << record.at("reward").at("total").get<double>() << '\n';
    }

    const EvalSettings& es = config.eval;
    if (es.interval_rollouts > 0 && trainer.rollouts() % es.interval_rollouts == 0) {
      EvalOptions o;
      o.track_name = setup.track.name;
      o.density = es.density.value_or(stage.density);
      o.gate_xy_range = es.gate_xy_range.value_or(stage.gate_xy_range);
      o.gate_z_range = es.gate_z_range.value_or(stage.gate_z_range);
      o.v_d = es.v_d.value_or(stage.v_d);
      o.trials = es.trials;
      o.seed = es.seed;
      o.threads = config.ppo.threads;
      o.env = setup.env;
      EvalReport report = evaluate(trainer.policy(), setup.track, o);
      json line = report.to_json();
      line["rollout"] = trainer.rollouts();
      line["step"] = trainer.steps();
      append_line(evals, line);
      if (opts.verbose) {
        std::cerr << "  eval sr " << report.success_rate << '\n';
      }
      result.last_eval = std::move(report);
      if (es.stop_success_rate &&
          result.last_eval->success_rate >= *es.stop_success_rate) {
        result.early_stopped = true;
        break;
      }
    }
    if (config.checkpoint_interval > 0 &&
        trainer.rollouts() % config.checkpoint_interval == 0) {
      save();
    }
  }
  save();
  result.steps = trainer.steps();
  result.rollouts = trainer.rollouts();
  return result;
}

}  // namespace gaterace
