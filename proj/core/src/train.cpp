#include "bimce/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "bimce/estimators.hpp"
#include "bimce/rng.hpp"

namespace bimce {

namespace {

void accumulate_nmse_sums(const Tensor& pred, const Tensor& target, double& err, double& ref) {
  for (int64_t i = 0; i < pred.numel(); ++i) {
    const double d = static_cast<double>(pred.v[(size_t)i]) - target.v[(size_t)i];
    err += d * d;
    ref += static_cast<double>(target.v[(size_t)i]) * target.v[(size_t)i];
  }
}

}  // namespace

double validation_nmse_db(Model& model, const Dataset& ds, int batch) {
  double err = 0.0, ref = 0.0;
  Tensor planes, belief, target;
  const int n = static_cast<int>(ds.samples.size());
  std::vector<int> idx;
  for (int at = 0; at < n; at += batch) {
    const int bn = std::min(batch, n - at);
    idx.resize(static_cast<size_t>(bn));
    std::iota(idx.begin(), idx.end(), at);
    fill_planes(ds.samples, idx, planes, belief);
    fill_targets(ds.samples, idx, target);
    const Tensor pred = model.predict(planes, belief);
    accumulate_nmse_sums(pred, target, err, ref);
  }
  return nmse_from_sums(err, ref).db;
}

TrainResult train_model(const ModelSpec& spec, const TrainConfig& tc, const Dataset& train_set,
                        const Dataset& val_set) {
  if (train_set.samples.empty()) throw std::invalid_argument("train: empty training set");
  if (tc.batch < 1) throw std::invalid_argument("train: batch must be positive");
  Model model(spec, tc.seed);
  AdamState adam;
  adam.lr = tc.lr;

  TrainResult out;
  out.history.best_epoch = -1;
  double best_db = std::numeric_limits<double>::infinity();

  const int n = static_cast<int>(train_set.samples.size());
  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Tensor planes, belief, target;

  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    // deterministic Fisher-Yates per epoch
    Rng shuffle_rng(derive_seed(tc.seed, seed_tag::kShuffle, static_cast<uint64_t>(epoch)));
    for (int i = n - 1; i > 0; --i)
      std::swap(order[(size_t)i], order[(size_t)shuffle_rng.next_below((uint64_t)i + 1)]);

    double loss_acc = 0.0;
    int batches = 0;
    for (int at = 0; at < n; at += tc.batch) {
      const int bn = std::min(tc.batch, n - at);
      const std::span<const int> idx(order.data() + at, static_cast<size_t>(bn));
      fill_planes(train_set.samples, idx, planes, belief);
      fill_targets(train_set.samples, idx, target);
      model.zero_grads();
      Tape tape;
      const int pred = model.forward(tape, planes, belief);
      const int loss = tape.mse(pred, tape.leaf(target));
      const double loss_val = tape.value(loss).v[0];
      if (!std::isfinite(loss_val))
        throw std::runtime_error("train: non-finite loss at epoch " + std::to_string(epoch) +
                                 ", batch " + std::to_string(batches) +
                                 " (lr=" + std::to_string(tc.lr) + ")");
      tape.backward(loss);
      adam_step(model.params(), adam);
      loss_acc += loss_val;
      ++batches;
    }
    out.history.train_loss.push_back(loss_acc / std::max(1, batches));

    double val_db = out.history.train_loss.back();
    if (!val_set.samples.empty()) val_db = validation_nmse_db(model, val_set);
    out.history.val_nmse_db.push_back(val_db);
    if (val_db < best_db) {
      best_db = val_db;
      out.history.best_epoch = epoch;
      out.best = snapshot(model, CheckpointMeta{.seed = tc.seed,
                                                .epochs = epoch + 1,
                                                .best_val_nmse_db = val_db});
    }
  }
  if (out.history.best_epoch < 0)  // epochs == 0: untrained snapshot
    out.best = snapshot(model, CheckpointMeta{.seed = tc.seed, .epochs = 0,
                                              .best_val_nmse_db = 0.0});
  return out;
}

}  // namespace bimce
