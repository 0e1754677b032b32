#include "bimce/experiments.hpp"

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>

#include "bimce/complexity.hpp"

namespace bimce {

namespace {

std::string cell_path(const std::string& cache_dir, uint64_t key) {
  char name[64];
  std::snprintf(name, sizeof(name), "cell_%016" PRIx64 ".ckpt", key);
  return (std::filesystem::path(cache_dir) / name).string();
}

double mean_of(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace

TrainingData make_training_data(const ExperimentConfig& cfg, int threads) {
  const PilotPattern pattern = cfg.make_pattern();
  GenSpec train_spec;
  train_spec.count = cfg.train.train_samples;
  train_spec.split = Split::kTrain;
  train_spec.ebno_lo_db = cfg.train.ebno_lo_db;
  train_spec.ebno_hi_db = cfg.train.ebno_hi_db;
  GenSpec val_spec = train_spec;
  val_spec.count = cfg.train.val_samples;
  val_spec.split = Split::kVal;
  TrainingData d;
  d.train = std::make_shared<Dataset>(
      generate_dataset(cfg.sim, pattern, train_spec, cfg.train.data_seed, threads));
  d.val = cfg.train.val_samples > 0
              ? std::make_shared<Dataset>(
                    generate_dataset(cfg.sim, pattern, val_spec, cfg.train.data_seed, threads))
              : std::make_shared<Dataset>();
  return d;
}

CellOutcome train_cell(const ExperimentConfig& cfg, const Dataset& train_set,
                       const Dataset& val_set, const std::string& cache_dir) {
  CellOutcome out;
  std::string path;
  if (!cache_dir.empty()) {
    std::filesystem::create_directories(cache_dir);
    path = cell_path(cache_dir, cfg.cell_hash());
    if (std::filesystem::exists(path)) {
      out.ckpt = load_checkpoint(path);
      out.from_cache = true;
      return out;
    }
  }
  TrainResult res = train_model(cfg.model, cfg.train, train_set, val_set);
  out.ckpt = std::move(res.best);
  out.history = std::move(res.history);
  if (!path.empty()) {
    const std::string tmp = path + ".tmp";
    save_checkpoint(tmp, out.ckpt);
    std::filesystem::rename(tmp, path);
  }
  return out;
}

ResultRow evaluate_learned_cell(const ExperimentConfig& cfg, const std::string& label,
                                const std::vector<uint64_t>& seeds, const TrainingData& data,
                                const std::string& cache_dir, double ebno_db, int threads,
                                std::vector<double>* per_seed_db) {
  const PilotPattern pattern = cfg.make_pattern();
  const std::vector<Sample> test =
      make_test_set(cfg.sim, pattern, ebno_db, cfg.eval.test_samples, cfg.sim.seed, threads);
  std::vector<double> per_seed;
  double seconds = 0.0;
  for (uint64_t s : seeds) {
    ExperimentConfig run = cfg;
    run.train.seed = s;
    const CellOutcome cell = train_cell(run, *data.train, *data.val, cache_dir);
    Model model = model_from_checkpoint(cell.ckpt);
    EstimatorRef ref = EstimatorRef::learned(label, model);
    const EvalPoint pt = evaluate_on(test, pattern, ref, ebno_db);
    per_seed.push_back(pt.nmse_db);
    seconds += pt.seconds;
  }
  const Complexity cx = count_complexity(cfg.model);
  ResultRow row;
  row.estimator = label;
  row.pilots = pattern.n_cp() * pattern.n_lp();
  row.ebno_db = ebno_db;
  row.nmse_db = mean_of(per_seed);
  const double spread = std_of(per_seed);
  row.ci_lo_db = row.nmse_db - spread;
  row.ci_hi_db = row.nmse_db + spread;
  row.params = cx.params;
  row.flops = cx.flops;
  row.seconds = seconds;
  if (per_seed_db) *per_seed_db = std::move(per_seed);
  return row;
}

namespace {

ResultRow evaluate_classical_row(const ExperimentConfig& cfg, const std::string& id,
                                 double ebno_db, const std::string& cache_dir, int threads) {
  const PilotPattern pattern = cfg.make_pattern();
  const std::vector<Sample> test =
      make_test_set(cfg.sim, pattern, ebno_db, cfg.eval.test_samples, cfg.sim.seed, threads);
  CovarianceModel cov;
  EstimatorRef ref;
  if (id == "ls_lmmse") {
    cov = lmmse_statistics(cfg, cache_dir, threads);
    ref = EstimatorRef::lmmse(cov);
  } else {
    ref = EstimatorRef::classical(id);
  }
  const EvalPoint pt = evaluate_on(test, pattern, ref, ebno_db);
  ResultRow row;
  row.estimator = id;
  row.pilots = pattern.n_cp() * pattern.n_lp();
  row.ebno_db = ebno_db;
  row.nmse_db = pt.nmse_db;
  row.ci_lo_db = pt.ci_lo_db;
  row.ci_hi_db = pt.ci_hi_db;
  row.seconds = pt.seconds;
  return row;
}

}  // namespace

std::vector<ResultRow> pilot_sweep(const ExperimentConfig& base,
                                   const std::vector<int>& pilot_counts,
                                   const std::vector<std::string>& estimators,
                                   const std::string& cache_dir, int threads, int n_seeds,
                                   double sweep_ebno_db) {
  std::vector<ResultRow> rows;
  std::vector<uint64_t> seeds;
  for (int s = 0; s < n_seeds; ++s) seeds.push_back(base.train.seed + static_cast<uint64_t>(s));
  for (int total_pilots : pilot_counts) {
    ExperimentConfig cfg = base;
    const int n_lp = static_cast<int>(cfg.pattern.symbols.size());
    if (total_pilots % n_lp != 0)
      throw std::invalid_argument("pilot_sweep: count " + std::to_string(total_pilots) +
                                  " not divisible by " + std::to_string(n_lp) +
                                  " pilot symbols");
    cfg.pattern.n_freq = total_pilots / n_lp;
    cfg.finalize();
    TrainingData data;  // built lazily, only when a learned estimator appears
    for (const std::string& id : estimators) {
      if (id == "genie" || id == "ls_nearest" || id == "ls_linear" || id == "ls_lmmse") {
        rows.push_back(evaluate_classical_row(cfg, id, sweep_ebno_db, cache_dir, threads));
      } else {
        ExperimentConfig run = cfg;
        if (id == "conv" || id == "mixer") {
          run.model.backbone = backbone_from_string(id);
          run.model.placement = BimPlacement::kOff;
        } else if (id == "bim_conv" || id == "bim_mixer") {
          run.model.backbone = backbone_from_string(id.substr(4));
          run.model.placement = BimPlacement::kAll;
        } else {
          throw std::invalid_argument("pilot_sweep: unknown estimator '" + id + "'");
        }
        run.finalize();
        if (!data.train) data = make_training_data(run, threads);
        rows.push_back(
            evaluate_learned_cell(run, id, seeds, data, cache_dir, sweep_ebno_db, threads));
      }
    }
  }
  return rows;
}

std::vector<ResultRow> placement_ablation(const ExperimentConfig& base,
                                          const std::string& cache_dir, int threads,
                                          int n_seeds) {
  if (base.model.backbone != Backbone::kConv)
    throw std::invalid_argument("placement_ablation: conv backbone required");
  std::vector<uint64_t> seeds;
  for (int s = 0; s < n_seeds; ++s) seeds.push_back(base.train.seed + static_cast<uint64_t>(s));
  const TrainingData data = make_training_data(base, threads);
  std::vector<ResultRow> rows;
  for (BimPlacement pl : {BimPlacement::kOff, BimPlacement::kAll, BimPlacement::kDenoiseOnly,
                          BimPlacement::kExpansionOnly}) {
    ExperimentConfig cfg = base;
    cfg.model.placement = pl;
    cfg.finalize();
    for (double ebno : cfg.eval.ebno_list) {
      rows.push_back(evaluate_learned_cell(cfg, std::string("conv_") + to_string(pl), seeds, data,
                                           cache_dir, ebno, threads));
    }
  }
  return rows;
}

}  // namespace bimce
