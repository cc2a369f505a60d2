#pragma once

// Run configuration (JSON with schema checks), reconstruction orchestration,
// result bundles and the subspace/full timing benchmark.

#include <chrono>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ttdps/denoiser.hpp"
#include "ttdps/errors.hpp"
#include "ttdps/gmm.hpp"
#include "ttdps/io.hpp"
#include "ttdps/lbfgs.hpp"
#include "ttdps/metrics.hpp"
#include "ttdps/phantoms.hpp"
#include "ttdps/reconstruct.hpp"
#include "ttdps/subspace.hpp"

namespace ttdps {

/// Invalid run configuration; the message starts with the JSON path.
class ConfigError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

enum class Method { kDps, kSubspaceDps, kLbfgs };

inline std::string to_string(Method m) {
  switch (m) {
    case Method::kDps: return "dps";
    case Method::kSubspaceDps: return "subspace-dps";
    case Method::kLbfgs: return "lbfgs";
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  if (s == "dps") return Method::kDps;
  if (s == "subspace-dps") return Method::kSubspaceDps;
  if (s == "lbfgs") return Method::kLbfgs;
  throw InvalidArgument("unknown method '" + s + "' (expected dps, subspace-dps or lbfgs)");
}

struct RunConfig {
  Method method = Method::kDps;
  SamplerConfig sampler;
  std::optional<SubspaceLadder> ladder;  // side filled in from the data grid
  /// "gmm" (one file, projected per level) or "model" (one denoiser file per level).
  std::string prior_kind = "gmm";
  std::vector<fs::path> prior_paths;
  /// Optional dataset manifest used to estimate orthogonal energies for model priors.
  fs::path prior_dataset;
  fs::path measurements;
  Pattern pattern = Pattern::kSurrounding;
  int n = 0;
  int transmitters = 0;
  int receivers = 0;
  LbfgsOptions lbfgs;
  double lbfgs_init = 0.5;
  fs::path output;
};

namespace detail {

enum class JType { kNumber, kInteger, kString, kBool, kArray, kObject };

inline const char* type_name(JType t) {
  switch (t) {
    case JType::kNumber: return "number";
    case JType::kInteger: return "integer";
    case JType::kString: return "string";
    case JType::kBool: return "boolean";
    case JType::kArray: return "array";
    case JType::kObject: return "object";
  }
  return "?";
}

inline bool has_type(const Json& j, JType t) {
  switch (t) {
    case JType::kNumber: return j.is_number();
    case JType::kInteger: return j.is_number_integer();
    case JType::kString: return j.is_string();
    case JType::kBool: return j.is_boolean();
    case JType::kArray: return j.is_array();
    case JType::kObject: return j.is_object();
  }
  return false;
}

/// Flat schema: "/section/key" -> type. Unknown keys are rejected.
inline const std::map<std::string, JType>& run_schema() {
  static const std::map<std::string, JType> s = {
      {"/method", JType::kString},
      {"/output", JType::kString},
      {"/schedule", JType::kObject},
      {"/schedule/beta_min", JType::kNumber},
      {"/schedule/beta_max", JType::kNumber},
      {"/schedule/t_end", JType::kNumber},
      {"/ladder", JType::kObject},
      {"/ladder/levels", JType::kInteger},
      {"/ladder/times", JType::kArray},
      {"/ladder/threshold", JType::kNumber},
      {"/ladder/orth_energy", JType::kArray},
      {"/sampler", JType::kObject},
      {"/sampler/rho", JType::kNumber},
      {"/sampler/level_rho", JType::kArray},
      {"/sampler/step_mode", JType::kString},
      {"/sampler/mu", JType::kNumber},
      {"/sampler/jacobian_mode", JType::kString},
      {"/sampler/steps", JType::kInteger},
      {"/sampler/seed", JType::kInteger},
      {"/sampler/eps_ratio", JType::kNumber},
      {"/sampler/c_min", JType::kNumber},
      {"/sampler/c_max", JType::kNumber},
      {"/sampler/threads", JType::kInteger},
      {"/prior", JType::kObject},
      {"/prior/kind", JType::kString},
      {"/prior/path", JType::kString},
      {"/prior/paths", JType::kArray},
      {"/prior/dataset", JType::kString},
      {"/data", JType::kObject},
      {"/data/measurements", JType::kString},
      {"/data/config", JType::kObject},
      {"/data/config/pattern", JType::kString},
      {"/data/config/n", JType::kInteger},
      {"/data/config/transmitters", JType::kInteger},
      {"/data/config/receivers", JType::kInteger},
      {"/lbfgs", JType::kObject},
      {"/lbfgs/max_iter", JType::kInteger},
      {"/lbfgs/memory", JType::kInteger},
      {"/lbfgs/sigma_g", JType::kNumber},
      {"/lbfgs/init", JType::kNumber},
  };
  return s;
}

inline void check_schema(const Json& j, const std::string& path = "") {
  if (!j.is_object()) throw ConfigError((path.empty() ? "/" : path) + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string p = path + "/" + it.key();
    const auto& schema = run_schema();
    const auto found = schema.find(p);
    if (found == schema.end()) throw ConfigError(p + ": unknown key");
    if (!has_type(it.value(), found->second))
      throw ConfigError(p + ": expected " + type_name(found->second) + ", got " + it.value().type_name());
    if (found->second == JType::kObject) check_schema(it.value(), p);
  }
}

inline const Json* find(const Json& j, const std::string& pointer) {
  const Json::json_pointer ptr(pointer);
  return j.contains(ptr) ? &j.at(ptr) : nullptr;
}

template <class T>
T get_or(const Json& j, const std::string& pointer, T fallback) {
  const Json* v = find(j, pointer);
  return v ? v->get<T>() : fallback;
}

inline fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path q(p);
  return q.is_absolute() || base.empty() ? q : base / q;
}

/// Re-throws library validation errors with the JSON path attached.
template <class F>
void at_path(const std::string& pointer, F&& f) {
  try {
    f();
  } catch (const ConfigError&) {
    throw;
  } catch (const Json::exception& e) {
    throw ConfigError(pointer + ": " + e.what());
  } catch (const InvalidArgument& e) {
    throw ConfigError(pointer + ": " + e.what());
  }
}

}  // namespace detail

/// Sets a value at a dotted path ("sampler.rho"), creating objects on the way.
/// The value text is parsed as JSON when possible, else taken as a string.
inline void apply_override(Json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  Json value;
  try {
    value = Json::parse(text);
  } catch (const Json::exception&) {
    value = text;
  }
  std::string pointer;
  std::stringstream ss(key);
  std::string part;
  while (std::getline(ss, part, '.')) pointer += "/" + part;
  j[Json::json_pointer(pointer)] = value;
}

/// Parses and validates a run configuration. Relative paths resolve against base_dir.
inline RunConfig parse_run_config(const Json& j, const fs::path& base_dir = {}) {
  detail::check_schema(j);
  RunConfig rc;
  using detail::at_path;
  using detail::get_or;
  at_path("/method", [&] { rc.method = parse_method(get_or<std::string>(j, "/method", "dps")); });
  at_path("/schedule", [&] {
    NoiseSchedule& s = rc.sampler.schedule;
    s.beta_min = get_or(j, "/schedule/beta_min", s.beta_min);
    s.beta_max = get_or(j, "/schedule/beta_max", s.beta_max);
    s.t_end = get_or(j, "/schedule/t_end", s.t_end);
    s.validate();
  });
  SamplerConfig& sc = rc.sampler;
  sc.steps = get_or(j, "/sampler/steps", sc.steps);
  sc.rho = get_or(j, "/sampler/rho", sc.rho);
  at_path("/sampler/level_rho", [&] { sc.level_rho = get_or(j, "/sampler/level_rho", sc.level_rho); });
  at_path("/sampler/step_mode", [&] {
    sc.step_mode = parse_step_mode(get_or<std::string>(j, "/sampler/step_mode", std::string(to_string(sc.step_mode))));
  });
  at_path("/sampler/jacobian_mode", [&] {
    sc.jacobian_mode =
        parse_jacobian_mode(get_or<std::string>(j, "/sampler/jacobian_mode", std::string(to_string(sc.jacobian_mode))));
  });
  sc.mu = get_or(j, "/sampler/mu", sc.mu);
  at_path("/sampler/seed", [&] { sc.seed = get_or<std::uint64_t>(j, "/sampler/seed", sc.seed); });
  sc.eps_ratio = get_or(j, "/sampler/eps_ratio", sc.eps_ratio);
  sc.c_min = get_or(j, "/sampler/c_min", sc.c_min);
  sc.c_max = get_or(j, "/sampler/c_max", sc.c_max);
  at_path("/sampler/threads", [&] { sc.threads = get_or<unsigned>(j, "/sampler/threads", sc.threads); });
  at_path("/sampler", [&] { sc.validate(); });

  at_path("/data/config", [&] {
    rc.pattern = parse_pattern(get_or<std::string>(j, "/data/config/pattern", "surrounding"));
    rc.n = get_or(j, "/data/config/n", 0);
    rc.transmitters = get_or(j, "/data/config/transmitters", 0);
    rc.receivers = get_or(j, "/data/config/receivers", 0);
    build_config(rc.pattern, build_grid(rc.n), rc.transmitters, rc.receivers);
  });
  if (const Json* m = detail::find(j, "/data/measurements")) rc.measurements = detail::resolve(base_dir, m->get<std::string>());
  else throw ConfigError("/data/measurements: required");

  if (detail::find(j, "/ladder")) {
    at_path("/ladder", [&] {
      SubspaceLadder lad;
      lad.side = rc.n;
      lad.times = get_or(j, "/ladder/times", std::vector<double>{});
      lad.threshold = get_or(j, "/ladder/threshold", kDefaultFisherThreshold);
      const int levels = get_or(j, "/ladder/levels", static_cast<int>(lad.times.size()));
      detail::require(levels == static_cast<int>(lad.times.size()), "levels does not match the number of times");
      lad.orth_energy = get_or(j, "/ladder/orth_energy", std::vector<double>{});
      rc.ladder = lad;
    });
  }
  if (rc.method == Method::kSubspaceDps && !rc.ladder) throw ConfigError("/ladder: required for subspace-dps");

  at_path("/prior", [&] {
    rc.prior_kind = get_or<std::string>(j, "/prior/kind", "gmm");
    detail::require(rc.prior_kind == "gmm" || rc.prior_kind == "model", "kind must be gmm or model");
    if (const Json* p = detail::find(j, "/prior/path")) rc.prior_paths.push_back(detail::resolve(base_dir, p->get<std::string>()));
    if (const Json* ps = detail::find(j, "/prior/paths"))
      for (const auto& p : *ps) rc.prior_paths.push_back(detail::resolve(base_dir, p.get<std::string>()));
    if (const Json* d = detail::find(j, "/prior/dataset")) rc.prior_dataset = detail::resolve(base_dir, d->get<std::string>());
    if (rc.method != Method::kLbfgs) detail::require(!rc.prior_paths.empty(), "path or paths required");
  });

  rc.lbfgs.max_iter = get_or(j, "/lbfgs/max_iter", rc.lbfgs.max_iter);
  rc.lbfgs.memory = get_or(j, "/lbfgs/memory", rc.lbfgs.memory);
  rc.lbfgs.sigma_g = get_or(j, "/lbfgs/sigma_g", rc.lbfgs.sigma_g);
  rc.lbfgs.threads = sc.threads;
  rc.lbfgs_init = get_or(j, "/lbfgs/init", rc.lbfgs_init);
  at_path("/lbfgs", [&] {
    detail::require(rc.lbfgs.max_iter >= 0 && rc.lbfgs.memory >= 1 && rc.lbfgs.sigma_g >= 0, "invalid options");
    detail::require(rc.lbfgs_init >= kMinVelocity && rc.lbfgs_init <= kMaxVelocity, "init outside [0.01, 1]");
  });
  if (const Json* o = detail::find(j, "/output")) rc.output = detail::resolve(base_dir, o->get<std::string>());
  return rc;
}

inline RunConfig load_run_config(const fs::path& path, const std::vector<std::string>& overrides = {}) {
  Json j = detail::parse_json(detail::read_all(path), path.string());
  for (const auto& o : overrides) apply_override(j, o);
  return parse_run_config(j, path.parent_path());
}

inline Json to_json(const RunConfig& rc) {
  const SamplerConfig& s = rc.sampler;
  Json j = {{"method", to_string(rc.method)},
            {"schedule", to_json(s.schedule)},
            {"sampler",
             {{"rho", s.rho},
              {"level_rho", s.level_rho},
              {"step_mode", std::string(to_string(s.step_mode))},
              {"mu", s.mu},
              {"jacobian_mode", std::string(to_string(s.jacobian_mode))},
              {"steps", s.steps},
              {"seed", s.seed},
              {"eps_ratio", s.eps_ratio},
              {"c_min", s.c_min},
              {"c_max", s.c_max}}},
            {"data",
             {{"measurements", rc.measurements.string()},
              {"config",
               {{"pattern", std::string(to_string(rc.pattern))},
                {"n", rc.n},
                {"transmitters", rc.transmitters},
                {"receivers", rc.receivers}}}}},
            {"lbfgs", {{"max_iter", rc.lbfgs.max_iter}, {"memory", rc.lbfgs.memory}, {"sigma_g", rc.lbfgs.sigma_g},
                       {"init", rc.lbfgs_init}}}};
  Json paths = Json::array();
  for (const auto& p : rc.prior_paths) paths.push_back(p.string());
  j["prior"] = {{"kind", rc.prior_kind}, {"paths", paths}};
  if (!rc.prior_dataset.empty()) j["prior"]["dataset"] = rc.prior_dataset.string();
  if (rc.ladder)
    j["ladder"] = {{"levels", rc.ladder->depth()},
                   {"times", rc.ladder->times},
                   {"threshold", rc.ladder->threshold},
                   {"orth_energy", rc.ladder->orth_energy}};
  if (!rc.output.empty()) j["output"] = rc.output.string();
  return j;
}

/// Score functions for levels 0..K plus the per-transition orthogonal energies.
struct PriorBundle {
  std::vector<std::unique_ptr<ScoreFunction>> scores;
  std::vector<double> orth_energy;

  std::vector<const ScoreFunction*> pointers() const {
    std::vector<const ScoreFunction*> out;
    for (const auto& s : scores) out.push_back(s.get());
    return out;
  }
};

inline PriorBundle load_prior(const RunConfig& rc, int depth) {
  PriorBundle b;
  const NoiseSchedule& s = rc.sampler.schedule;
  if (rc.prior_kind == "gmm") {
    detail::require(rc.prior_paths.size() == 1, "a gmm prior takes exactly one file");
    const GmmPrior full = load_gmm(rc.prior_paths.front());
    detail::require(full.dimension() == static_cast<std::size_t>(rc.n) * rc.n,
                    "prior dimension does not match the data grid");
    for (int k = 0; k <= depth; ++k) {
      b.scores.push_back(std::make_unique<GmmScore>(project_gmm(full, k), s, k));
      if (k > 0) b.orth_energy.push_back(orth_energy_per_coord(project_gmm(full, k - 1)));
    }
    return b;
  }
  detail::require(static_cast<int>(rc.prior_paths.size()) == depth + 1,
                  "model prior needs one file per ladder level (" + std::to_string(depth + 1) + ")");
  for (int k = 0; k <= depth; ++k) {
    auto m = std::make_unique<DenoiserModel>(load_model(rc.prior_paths[k]));
    detail::require(m->level() == k, "model " + rc.prior_paths[k].string() + " serves level " +
                                         std::to_string(m->level()) + ", expected " + std::to_string(k));
    b.scores.push_back(std::move(m));
  }
  if (depth > 0 && !rc.prior_dataset.empty()) {
    const auto data = load_dataset(rc.prior_dataset);
    for (int k = 1; k <= depth; ++k) {
      std::vector<Vector> pooled;
      for (const auto& x : data) pooled.push_back(project_levels(x, k - 1));
      b.orth_energy.push_back(orth_energy_per_coord(pooled));
    }
  }
  return b;
}

struct RunOutput {
  ReconstructionResult result;
  RunConfig config;
};

inline RunOutput run_reconstruction(const RunConfig& rc) {
  const Grid2D grid = build_grid(rc.n);
  const SourceReceiverConfig config = build_config(rc.pattern, grid, rc.transmitters, rc.receivers);
  const MeasurementMatrix y = read_measurements(rc.measurements);
  detail::require(y.rows() == static_cast<int>(config.receivers.size()) &&
                      y.cols() == static_cast<int>(config.transmitters.size()),
                  "measurement matrix is " + std::to_string(y.rows()) + "x" + std::to_string(y.cols()) +
                      ", configuration expects " + std::to_string(config.receivers.size()) + "x" +
                      std::to_string(config.transmitters.size()));
  RunOutput out{{}, rc};
  switch (rc.method) {
    case Method::kLbfgs:
      out.result = lbfgs_run(y, config, VelocityField(grid, rc.lbfgs_init), rc.lbfgs);
      break;
    case Method::kDps: {
      const PriorBundle p = load_prior(rc, 0);
      out.result = dps_run(y, config, *p.scores[0], rc.sampler);
      break;
    }
    case Method::kSubspaceDps: {
      SubspaceLadder lad = *rc.ladder;
      lad.side = rc.n;
      const PriorBundle p = load_prior(rc, lad.depth());
      if (lad.orth_energy.empty()) lad.orth_energy = p.orth_energy;
      if (lad.orth_energy.empty())
        throw ConfigError("/ladder/orth_energy: required for model priors without prior.dataset");
      out.config.ladder = lad;
      out.result = subspace_dps_run(y, config, lad, p.pointers(), rc.sampler);
      break;
    }
  }
  return out;
}

inline std::string history_csv(const ReconstructionResult& r) {
  std::ostringstream out;
  out.precision(17);
  out << "step,level,misfit,step_size\n";
  for (std::size_t i = 0; i < r.history.size(); ++i)
    out << i << ',' << (i < r.step_levels.size() ? r.step_levels[i] : 0) << ',' << r.history[i] << ','
        << (i < r.step_sizes.size() ? r.step_sizes[i] : 0.0) << '\n';
  return out.str();
}

inline std::string timing_csv(const std::string& phase, const ReconstructionResult& r) {
  std::ostringstream out;
  out.precision(9);
  for (std::size_t k = r.level_seconds.size(); k-- > 0;) out << phase << ',' << k << ',' << r.level_seconds[k] << '\n';
  out << phase << ",total," << r.total_seconds << '\n';
  return out.str();
}

/// velocity.f32 (+ sidecar), preview.pgm, history.csv, timing.csv, config.json.
inline void write_bundle(const fs::path& dir, const RunOutput& run) {
  const auto& r = run.result;
  write_raster(dir / "velocity.f32", r.velocity.raster());
  write_pgm(dir / "preview.pgm", r.velocity.raster());
  write_text(dir / "history.csv", history_csv(r));
  write_text(dir / "timing.csv", "phase,level,seconds\n" + timing_csv(to_string(run.config.method), r));
  Json snap = to_json(run.config);
  snap["result"] = {{"final_misfit", r.final_misfit},
                    {"solver_calls", r.solver_calls},
                    {"line_search_failed", r.line_search_failed}};
  write_text(dir / "config.json", snap.dump(2) + "\n");
}

struct BenchResult {
  std::vector<ReconstructionResult> full, subspace;
  double mean_full = 0.0, mean_subspace = 0.0;
  double ratio() const { return mean_subspace / mean_full; }
};

/// Runs full-space and subspace DPS `repeats` times each with shared seeds
/// (seed, seed + 1, ...), alternating the two so drift affects both equally.
inline BenchResult bench(const RunConfig& base, int repeats) {
  detail::require(repeats >= 1, "bench needs at least one repeat");
  detail::require(base.ladder.has_value(), "bench needs a ladder for the subspace run");
  BenchResult b;
  for (int r = 0; r < repeats; ++r) {
    RunConfig full = base, sub = base;
    full.method = Method::kDps;
    sub.method = Method::kSubspaceDps;
    full.sampler.seed = sub.sampler.seed = base.sampler.seed + static_cast<std::uint64_t>(r);
    b.full.push_back(run_reconstruction(full).result);
    b.subspace.push_back(run_reconstruction(sub).result);
    b.mean_full += b.full.back().total_seconds / repeats;
    b.mean_subspace += b.subspace.back().total_seconds / repeats;
  }
  return b;
}

inline std::string bench_csv(const BenchResult& b) {
  std::string out = "phase,level,seconds\n";
  for (std::size_t i = 0; i < b.full.size(); ++i) {
    out += timing_csv("full", b.full[i]);
    out += timing_csv("subspace", b.subspace[i]);
  }
  return out;
}

}  // namespace ttdps
