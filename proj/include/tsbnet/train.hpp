#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tsbnet/checkpoint.hpp"
#include "tsbnet/eval.hpp"
#include "tsbnet/model.hpp"
#include "tsbnet/optim.hpp"
#include "tsbnet/rng.hpp"
#include "tsbnet/synth_data.hpp"

namespace tsbnet {

// Raised when training hits a non-finite loss; carries the diagnostic triple.
class NumericalError : public std::runtime_error {
 public:
  NumericalError(std::int64_t iteration, double lr, double grad_norm)
      : std::runtime_error(format(iteration, lr, grad_norm)),
        iteration_(iteration),
        lr_(lr),
        grad_norm_(grad_norm) {}
  std::int64_t iteration() const { return iteration_; }
  double lr() const { return lr_; }
  double grad_norm() const { return grad_norm_; }

 private:
  static std::string format(std::int64_t it, double lr, double gn) {
    std::ostringstream s;
    s << "non-finite loss at iteration " << it << " (lr " << lr
      << ", last gradient norm " << gn << ")";
    return s.str();
  }
  std::int64_t iteration_;
  double lr_, grad_norm_;
};

enum class Phase { pretrain, finetune };

struct PhaseOptions {
  Phase phase = Phase::pretrain;
  bool augment = true;
  std::int64_t checkpoint_every = 0;  // 0: only the final checkpoint
  std::string out_dir;                // empty: no files written
  DisparityGuard guard = DisparityGuard::clamp;
  // optional early stop: halt once loss <= stop_loss (ignored when <= 0)
  double stop_loss = 0.0;
};

struct TrainResult {
  std::int64_t iterations = 0;
  double first_loss = 0.0;
  double final_loss = 0.0;
  std::vector<double> losses;
  std::string checkpoint_path;
  std::string log_path;
};

namespace detail {

// Deterministic epoch-wise batch source: shuffled record order, fresh
// per-record scale choices each epoch.
class BatchCursor {
 public:
  BatchCursor(std::vector<std::size_t> indices, bool augment, std::uint64_t seed)
      : indices_(std::move(indices)),
        order_(indices_.size()),
        augment_(augment),
        shuffle_rng_(substream(seed, "batch-shuffle")),
        scale_rng_(substream(seed, "scale-choices")) {
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
    cursor_ = order_.size();  // forces a fresh epoch on first use
  }

  void next(std::size_t n, std::vector<std::size_t>& idxs, std::vector<int>& scales) {
    idxs.clear();
    scales.clear();
    while (idxs.size() < n) {
      if (cursor_ == order_.size()) {
        shuffle_rng_.shuffle(order_.begin(), order_.end());
        scales_ = epoch_scale_choices(indices_.size(), augment_, scale_rng_);
        cursor_ = 0;
      }
      const std::size_t pos = order_[cursor_++];
      idxs.push_back(indices_[pos]);
      scales.push_back(scales_[pos]);
    }
  }

 private:
  std::vector<std::size_t> indices_;
  std::vector<std::size_t> order_;
  std::vector<int> scales_;
  bool augment_;
  std::size_t cursor_;
  Rng shuffle_rng_, scale_rng_;
};

}  // namespace detail

// One training phase over the dataset's train split. Pretrain regresses
// crop-normalized triplets; finetune regresses millimetre coordinates through
// the triangulation layer. Returns after max_iters (or the early stop).
inline TrainResult train_phase(Model<float>& model, const Dataset& ds,
                               const StereoRig& rig, const TrainConfig& tc,
                               const PhaseOptions& opt) {
  tc.validate();
  if (opt.phase == Phase::finetune && !model.config().attach_bdm)
    throw std::invalid_argument("finetune requires a model with the triangulation layer");
  const std::vector<std::size_t> train_idx = split_indices(ds, "train");
  if (train_idx.empty())
    throw std::invalid_argument("train_phase: dataset has no train records");

  TrainResult res;
  std::ofstream log;
  if (!opt.out_dir.empty()) {
    std::filesystem::create_directories(opt.out_dir);
    res.log_path = opt.out_dir + "/train_log.csv";
    log.open(res.log_path, std::ios::trunc);
    if (!log) throw std::runtime_error("cannot write " + res.log_path);
    log << "iter,lr,loss,grad_norm\n";
    log.precision(12);
  }

  detail::BatchCursor cursor(train_idx, opt.augment, tc.seed);
  std::vector<std::size_t> idxs;
  std::vector<int> scales;
  const bool use_mask = model.config().use_mask_channel;
  double last_gnorm = 0.0;

  for (std::int64_t iter = 0; iter < tc.max_iters; ++iter) {
    cursor.next(static_cast<std::size_t>(tc.batch_size), idxs, scales);
    const Batch batch = assemble_batch(ds, idxs, scales, use_mask);
    const double lr = learning_rate(tc, iter);

    model.zero_grads();
    double loss;
    if (opt.phase == Phase::pretrain) {
      const TensorF pred = model.forward_pixels(batch.left, batch.right);
      MseOut<float> mse = mse_loss(pred, batch.label_norm);
      loss = mse.loss;
      if (!std::isfinite(loss)) throw NumericalError(iter, lr, last_gnorm);
      model.backward_pixels(mse.grad);
    } else {
      const TensorF pred =
          model.forward_3d(rig, batch.metas, batch.left, batch.right, opt.guard);
      MseOut<float> mse = mse_loss(pred, batch.label_3d);
      loss = mse.loss;
      if (!std::isfinite(loss)) throw NumericalError(iter, lr, last_gnorm);
      model.backward_3d(mse.grad);
    }
    const double gnorm = model.grad_norm();
    if (!std::isfinite(gnorm)) throw NumericalError(iter, lr, gnorm);
    last_gnorm = gnorm;

    if (log.is_open())
      log << iter << "," << lr << "," << loss << "," << gnorm << "\n";
    if (iter == 0) res.first_loss = loss;
    res.final_loss = loss;
    res.losses.push_back(loss);

    model.sgd_update(tc, iter);
    res.iterations = iter + 1;

    if (!opt.out_dir.empty() && opt.checkpoint_every > 0 &&
        (iter + 1) % opt.checkpoint_every == 0 && iter + 1 < tc.max_iters) {
      std::ostringstream name;
      name << opt.out_dir << "/ckpt_" << std::setw(6) << std::setfill('0')
           << (iter + 1) << ".ckpt";
      save_checkpoint(model, name.str(), true, &rig);
    }
    if (opt.stop_loss > 0.0 && loss <= opt.stop_loss) break;
  }

  if (!opt.out_dir.empty()) {
    res.checkpoint_path = opt.out_dir + "/final.ckpt";
    save_checkpoint(model, res.checkpoint_path, true, &rig);
  }
  return res;
}

}  // namespace tsbnet
