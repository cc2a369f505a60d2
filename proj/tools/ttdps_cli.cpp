// ttdps: command-line front end for data generation, prior training,
// ladder scheduling, reconstruction, evaluation and benchmarking.

#include <CLI11.hpp>
#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <json.hpp>

#include "ttdps/workbench.hpp"

using namespace ttdps;

namespace {

enum ExitCode { kOk = 0, kBadConfig = 2, kNumerical = 3, kIo = 4 };

/// JSON option files for CLI11: {"n": 64, "seed": 1}. Keys are long option names
/// of the subcommand named in `section`.
class JsonConfig : public CLI::Config {
 public:
  explicit JsonConfig(std::string section) : section_(std::move(section)) {}

  std::string to_config(const CLI::App* app, bool default_also, bool, std::string) const override {
    Json j = Json::object();
    for (const CLI::Option* opt : app->get_options({})) {
      if (opt->get_lnames().empty() || !opt->get_configurable()) continue;
      const std::string name = opt->get_lnames()[0];
      if (opt->count() > 0) {
        const auto& r = opt->results();
        j[name] = r.size() == 1 ? Json(r[0]) : Json(r);
      } else if (default_also && !opt->get_default_str().empty()) {
        j[name] = opt->get_default_str();
      }
    }
    return j.dump(2) + "\n";
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    Json j;
    try {
      j = Json::parse(input);
    } catch (const Json::exception& e) {
      throw CLI::ConversionError("config file is not valid JSON: " + std::string(e.what()));
    }
    if (!j.is_object()) throw CLI::ConversionError("config file must hold a JSON object");
    std::vector<CLI::ConfigItem> items;
    for (auto it = j.begin(); it != j.end(); ++it) {
      CLI::ConfigItem item;
      if (!section_.empty()) item.parents = {section_};
      item.name = it.key();
      auto text = [](const Json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); };
      if (it->is_array()) {
        for (const auto& v : *it) item.inputs.push_back(text(v));
      } else if (it->is_object()) {
        throw CLI::ConversionError("/" + it.key() + ": nested objects are not options");
      } else {
        item.inputs.push_back(text(*it));
      }
      items.push_back(std::move(item));
    }
    return items;
  }

 private:
  std::string section_;
};

// Config files are only read by the top-level app, so subcommands pass --config up to it.
void add_json_config(CLI::App* cmd) {
  cmd->fallthrough();
  cmd->allow_config_extras(CLI::config_extras_mode::error);
}

struct ScheduleFlags {
  NoiseSchedule s;
  void add(CLI::App* cmd) {
    cmd->add_option("--beta-min", s.beta_min, "VP-SDE beta_min")->capture_default_str();
    cmd->add_option("--beta-max", s.beta_max, "VP-SDE beta_max")->capture_default_str();
    cmd->add_option("--t-end", s.t_end, "VP-SDE terminal time")->capture_default_str();
  }
};

// ---- datagen

struct DatagenArgs {
  PhantomSpec spec;
  std::string kind = "kit4", split = "train";
  int n = 64, count = 0;
  fs::path out;
};

void run_datagen(DatagenArgs a) {
  a.spec.kind = parse_phantom_kind(a.kind);
  detail::require(a.split == "train" || a.split == "test", "split must be train or test");
  const auto m = make_dataset(a.spec, build_grid(a.n), a.count, a.out,
                              a.split == "train" ? DatasetSplit::kTrain : DatasetSplit::kTest);
  std::cout << "wrote " << m.entries.size() << " " << a.kind << " phantoms (" << a.n << "x" << a.n << ") to "
            << (a.out / kManifestName).string() << "\n";
}

// ---- simulate

struct SimulateArgs {
  fs::path velocity, dataset, out;
  std::string pattern = "surrounding";
  int transmitters = 16, receivers = 64;
  double noise = 0.01;
  std::uint64_t seed = 0;
  unsigned threads = 0;
};

void run_simulate(const SimulateArgs& a) {
  detail::require(a.velocity.empty() != a.dataset.empty(), "give exactly one of --velocity or --dataset");
  auto one = [&](const VelocityField& c, std::uint64_t seed, const fs::path& out) {
    const auto cfg = build_config(parse_pattern(a.pattern), c.grid(), a.transmitters, a.receivers);
    write_measurements(out, simulate(c, cfg, a.noise, seed, a.threads));
  };
  if (!a.velocity.empty()) {
    one(read_velocity(a.velocity), a.seed, a.out);
    std::cout << "wrote " << a.out.string() << "\n";
    return;
  }
  const Json j = detail::parse_json(detail::read_all(a.dataset), a.dataset.string());
  int i = 0;
  for (const auto& e : j.at("entries")) {
    const std::string id = e.at("id").get<std::string>();
    one(read_velocity(a.dataset.parent_path() / e.at("path").get<std::string>()), a.seed + static_cast<std::uint64_t>(i),
        a.out / (id + ".csv"));
    ++i;
  }
  std::cout << "wrote " << i << " measurement files to " << a.out.string() << "\n";
}

// ---- train-score

inline constexpr int kMaxMlpSide = 32;

struct TrainArgs {
  fs::path dataset, out;
  std::string kind = "gmm";
  int level = 0;
  GmmFitOptions gmm;
  TrainConfig mlp;
  ScheduleFlags schedule;
};

void run_train(const TrainArgs& a) {
  const auto data = load_dataset(a.dataset);
  const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(data.front().size()))));
  if (a.kind == "gmm") {
    detail::require(a.level == 0, "gmm priors are fitted at full resolution and projected per level; drop --level");
    const GmmPrior p = fit_gmm(data, a.gmm);
    save_gmm(a.out, p);
    std::cout << "fitted " << p.components().size() << "-component gmm (dimension " << p.dimension() << ") -> "
              << a.out.string() << "\n";
    return;
  }
  detail::require(a.kind == "mlp", "kind must be gmm or mlp");
  detail::require(a.level >= 0 && (side >> a.level) >= 1 && side % (1 << a.level) == 0, "level too deep for the data");
  detail::require((side >> a.level) <= kMaxMlpSide,
                  "mlp training is limited to " + std::to_string(kMaxMlpSide) + "x" + std::to_string(kMaxMlpSide) +
                      " inputs; use --level " + std::to_string(static_cast<int>(std::log2(side / kMaxMlpSide))) +
                      " or more");
  std::vector<Vector> pooled;
  pooled.reserve(data.size());
  for (const auto& x : data) pooled.push_back(project_levels(x, a.level));
  const DenoiserModel m = train_denoiser(pooled, a.schedule.s, a.mlp, a.level, a.dataset.string());
  save_model(a.out, m);
  std::cout << "trained level-" << a.level << " denoiser (" << m.architecture().parameter_count()
            << " parameters, final loss " << m.final_loss << ") -> " << a.out.string() << "\n";
}

// ---- fisher-scan

struct FisherArgs {
  fs::path prior, dataset, out;
  std::vector<std::string> models;
  int levels = 1, times = 50, samples = 4096;
  double threshold = kDefaultFisherThreshold;
  std::uint64_t seed = 0;
  unsigned threads = 0;
  ScheduleFlags schedule;
};

void run_fisher(const FisherArgs& a) {
  detail::require(a.prior.empty() != a.models.empty(), "give exactly one of --prior or --models");
  detail::require(a.levels >= 1 && a.times >= 2, "need at least one level and two grid times");
  const NoiseSchedule& s = a.schedule.s;
  std::vector<double> grid;
  for (int i = 1; i <= a.times; ++i) grid.push_back(s.t_end * i / a.times);
  std::vector<FisherCurve> curves;
  if (!a.prior.empty()) {
    const GmmPrior full = load_gmm(a.prior);
    for (int k = 1; k <= a.levels; ++k) {
      const GmmPrior pk = project_gmm(full, k - 1);
      curves.push_back(fisher_curve(GmmScore(pk, s, k - 1), source_from(pk), orth_energy_per_coord(pk), grid, s,
                                    a.samples, a.seed, a.threads));
    }
  } else {
    detail::require(static_cast<int>(a.models.size()) == a.levels,
                    "--models needs one file per transition (levels 0.." + std::to_string(a.levels - 1) + ")");
    detail::require(!a.dataset.empty(), "--models needs --dataset for clean samples");
    const auto data = load_dataset(a.dataset);
    for (int k = 1; k <= a.levels; ++k) {
      const DenoiserModel m = load_model(a.models[k - 1]);
      detail::require(m.level() == k - 1, a.models[k - 1] + " is not a level-" + std::to_string(k - 1) + " model");
      std::vector<Vector> pooled;
      for (const auto& x : data) pooled.push_back(project_levels(x, k - 1));
      const double e = orth_energy_per_coord(pooled);
      curves.push_back(fisher_curve(m, source_from(std::move(pooled)), e, grid, m.schedule(), a.samples, a.seed,
                                    a.threads));
    }
  }
  std::ostringstream csv;
  csv.precision(17);
  csv << "transition,t,D_F,stderr\n";
  for (std::size_t k = 0; k < curves.size(); ++k)
    for (std::size_t i = 0; i < curves[k].times.size(); ++i)
      csv << k + 1 << ',' << curves[k].times[i] << ',' << curves[k].values[i] << ',' << curves[k].stderrs[i] << '\n';
  if (!a.out.empty()) write_text(a.out, csv.str());
  const auto times = select_times(curves, a.threshold);
  std::cout << Json{{"times", times}, {"threshold", a.threshold}}.dump() << "\n";
}

// ---- reconstruct / bench

struct RunArgs {
  fs::path config, out, batch;
  std::vector<std::string> set;
  int repeats = 3;
};

RunConfig load_with_output(const RunArgs& a) {
  RunConfig rc = load_run_config(a.config, a.set);
  if (!a.out.empty()) rc.output = a.out;
  if (rc.output.empty()) throw ConfigError("/output: required (or pass --out)");
  return rc;
}

void run_reconstruct(const RunArgs& a) {
  RunConfig rc = load_with_output(a);
  if (a.batch.empty()) {
    const RunOutput out = run_reconstruction(rc);
    write_bundle(rc.output, out);
    std::cout << to_string(rc.method) << ": final misfit " << out.result.final_misfit << ", "
              << out.result.total_seconds << " s -> " << rc.output.string() << "\n";
    return;
  }
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(a.batch))
    if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  detail::require(!files.empty(), "no measurement .csv files in " + a.batch.string());
  for (const auto& f : files) {
    RunConfig one = rc;
    one.measurements = f;
    const std::string id = f.stem().string();
    const RunOutput out = run_reconstruction(one);
    write_bundle(rc.output / id, out);
    write_raster(rc.output / (id + ".f32"), out.result.velocity.raster());
    std::cout << id << ": final misfit " << out.result.final_misfit << ", " << out.result.total_seconds << " s\n";
  }
}

void run_bench(const RunArgs& a) {
  const RunConfig rc = load_run_config(a.config, a.set);
  const BenchResult b = bench(rc, a.repeats);
  const std::string csv = bench_csv(b);
  if (!a.out.empty()) write_text(a.out, csv);
  else std::cout << csv;
  std::cout << "mean full " << b.mean_full << " s, mean subspace " << b.mean_subspace << " s, ratio " << b.ratio()
            << "\n";
}

// ---- evaluate

struct EvalArgs {
  fs::path results, truth, out;
  std::string method;
};

void run_evaluate(const EvalArgs& a) {
  const EvalReport r = evaluate(a.results, a.truth, a.method);
  if (!a.out.empty()) {
    write_text(a.out / "metrics.csv", report_csv(r));
    write_text(a.out / "metrics.json", to_json(r).dump(2) + "\n");
  }
  std::printf("%zu samples: rmse mean %.6f median %.6f, ssim mean %.4f median %.4f\n", r.entries.size(), r.mean_rmse,
              r.median_rmse, r.mean_ssim, r.median_ssim);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Travel-time tomography with diffusion priors"};
  app.require_subcommand(1);
  std::string section;
  for (int i = 1; i < argc && section.empty(); ++i)
    if (argv[i][0] != '-') section = argv[i];
  app.set_config("--config", "", "JSON file with option values; command-line flags win");
  app.config_formatter(std::make_shared<JsonConfig>(section));
  app.allow_config_extras(CLI::config_extras_mode::error);

  DatagenArgs dg;
  auto* datagen = app.add_subcommand("datagen", "Generate a phantom dataset with a manifest");
  add_json_config(datagen);
  datagen->add_option("--out", dg.out, "Output directory")->required();
  datagen->add_option("--count", dg.count, "Number of phantoms")->required();
  datagen->add_option("--n", dg.n, "Grid side")->capture_default_str();
  datagen->add_option("--kind", dg.kind, "kit4 or layered")->capture_default_str();
  datagen->add_option("--split", dg.split, "train or test")->capture_default_str();
  datagen->add_option("--seed", dg.spec.seed, "Base seed")->capture_default_str();
  datagen->add_option("--min-shapes", dg.spec.min_shapes)->capture_default_str();
  datagen->add_option("--max-shapes", dg.spec.max_shapes)->capture_default_str();
  datagen->add_option("--v-min", dg.spec.v_min)->capture_default_str();
  datagen->add_option("--v-max", dg.spec.v_max)->capture_default_str();
  datagen->add_option("--background", dg.spec.background)->capture_default_str();
  datagen->add_option("--min-layers", dg.spec.min_layers)->capture_default_str();
  datagen->add_option("--max-layers", dg.spec.max_layers)->capture_default_str();
  datagen->add_option("--max-dip", dg.spec.max_dip)->capture_default_str();
  datagen->add_option("--max-faults", dg.spec.max_faults)->capture_default_str();

  SimulateArgs sim;
  auto* simulate_cmd = app.add_subcommand("simulate", "Simulate noisy travel times");
  add_json_config(simulate_cmd);
  simulate_cmd->add_option("--velocity", sim.velocity, "Velocity raster");
  simulate_cmd->add_option("--dataset", sim.dataset, "Dataset manifest (one CSV per entry)");
  simulate_cmd->add_option("--out", sim.out, "Output CSV (or directory with --dataset)")->required();
  simulate_cmd->add_option("--pattern", sim.pattern, "horizontal, vertical or surrounding")->capture_default_str();
  simulate_cmd->add_option("--transmitters", sim.transmitters)->capture_default_str();
  simulate_cmd->add_option("--receivers", sim.receivers)->capture_default_str();
  simulate_cmd->add_option("--noise", sim.noise, "Relative noise level")->capture_default_str();
  simulate_cmd->add_option("--seed", sim.seed)->capture_default_str();
  simulate_cmd->add_option("--threads", sim.threads, "0 = hardware concurrency")->capture_default_str();

  TrainArgs tr;
  auto* train = app.add_subcommand("train-score", "Fit a GMM prior or train an MLP denoiser");
  add_json_config(train);
  train->add_option("--dataset", tr.dataset, "Dataset manifest")->required();
  train->add_option("--out", tr.out, "Output prior/model file")->required();
  train->add_option("--kind", tr.kind, "gmm or mlp")->capture_default_str();
  train->add_option("--level", tr.level, "Pooling level (mlp only)")->capture_default_str();
  train->add_option("--components", tr.gmm.components)->capture_default_str();
  train->add_option("--rank", tr.gmm.rank)->capture_default_str();
  train->add_option("--isotropic", tr.gmm.isotropic_variance, "Negative = maximum likelihood")->capture_default_str();
  train->add_option("--epochs", tr.mlp.epochs)->capture_default_str();
  train->add_option("--batch-size", tr.mlp.batch_size)->capture_default_str();
  train->add_option("--lr", tr.mlp.learning_rate)->capture_default_str();
  train->add_option("--hidden", tr.mlp.hidden, "0 = 4 x input dimension")->capture_default_str();
  train->add_option("--seed", tr.mlp.seed)->capture_default_str();
  tr.schedule.add(train);
  train->callback([&] { tr.gmm.seed = tr.mlp.seed; });

  FisherArgs fa;
  auto* fisher = app.add_subcommand("fisher-scan", "Orthogonal Fisher divergence curves and ladder times");
  add_json_config(fisher);
  fisher->add_option("--prior", fa.prior, "GMM prior file");
  fisher->add_option("--models", fa.models, "Denoisers for levels 0..K-1");
  fisher->add_option("--dataset", fa.dataset, "Dataset manifest (with --models)");
  fisher->add_option("--levels", fa.levels, "Ladder depth K")->capture_default_str();
  fisher->add_option("--times", fa.times, "Grid points on (0, T_end]")->capture_default_str();
  fisher->add_option("--samples", fa.samples, "Monte-Carlo samples per point")->capture_default_str();
  fisher->add_option("--threshold", fa.threshold)->capture_default_str();
  fisher->add_option("--seed", fa.seed)->capture_default_str();
  fisher->add_option("--threads", fa.threads)->capture_default_str();
  fisher->add_option("--out", fa.out, "Curve CSV");
  fa.schedule.add(fisher);

  RunArgs ra;
  auto* reconstruct = app.add_subcommand("reconstruct", "Run dps, subspace-dps or lbfgs from a run config");
  reconstruct->add_option("--config", ra.config, "Run config JSON")->required()->check(CLI::ExistingFile);
  reconstruct->add_option("--set", ra.set, "Override, e.g. sampler.rho=0.2");
  reconstruct->add_option("--out", ra.out, "Output directory (overrides the config)");
  reconstruct->add_option("--batch", ra.batch, "Directory of measurement CSVs, one run each");

  RunArgs ba;
  auto* bench_cmd = app.add_subcommand("bench", "Time full-space against subspace DPS");
  bench_cmd->add_option("--config", ba.config, "Run config JSON with a ladder")->required()->check(CLI::ExistingFile);
  bench_cmd->add_option("--set", ba.set, "Override, e.g. ladder.times=[0.5]");
  bench_cmd->add_option("--repeats", ba.repeats)->capture_default_str();
  bench_cmd->add_option("--out", ba.out, "Timing CSV (default: stdout)");

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("evaluate", "RMSE and SSIM of results against truths");
  eval_cmd->add_option("--results", ea.results, "Directory of result rasters")->required();
  eval_cmd->add_option("--truth", ea.truth, "Directory of truth rasters")->required();
  eval_cmd->add_option("--method", ea.method, "Label stored in the report");
  eval_cmd->add_option("--out", ea.out, "Directory for metrics.csv and metrics.json");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ConfigError& e) {
    // CLI11 reports unknown file keys as "INI was not able to parse <section>.<key>".
    std::string key = e.what();
    key = key.substr(key.find_last_of(' ') + 1);
    std::replace(key.begin(), key.end(), '.', '/');
    std::cerr << "error: /" << key << ": not an option of this command\n";
    return kBadConfig;
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kBadConfig;
  }

  try {
    if (*datagen) run_datagen(dg);
    else if (*simulate_cmd) run_simulate(sim);
    else if (*train) run_train(tr);
    else if (*fisher) run_fisher(fa);
    else if (*reconstruct) run_reconstruct(ra);
    else if (*bench_cmd) run_bench(ba);
    else if (*eval_cmd) run_evaluate(ea);
  } catch (const InvalidArgument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kBadConfig;
  } catch (const ScheduleInfeasible& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kBadConfig;
  } catch (const NumericalFailure& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kNumerical;
  } catch (const GenerationFailure& e) {
    std::cerr << "generation failure: " << e.what() << "\n";
    return kNumerical;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kIo;
  } catch (const Json::exception& e) {
    std::cerr << "io error: malformed JSON: " << e.what() << "\n";
    return kIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kIo;
  }
  return kOk;
}
