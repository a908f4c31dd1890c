#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <exception>
#include <fstream>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "tsbnet/model.hpp"
#include "tsbnet/stereo_geometry.hpp"
#include "tsbnet/synth_data.hpp"
#include "tsbnet/tensor.hpp"

namespace tsbnet {

// Success-frame curve runs over integer thresholds 0..80 mm.
inline constexpr int kCurveMaxMm = 80;

struct MetricsReport {
  std::array<double, kNumJoints> per_joint_mm{};
  double overall_mm = 0.0;
  std::array<double, kCurveMaxMm + 1> success_pct{};
  std::int64_t frames = 0;
};

// Both tensors are [N,18]: rows of (x,y,z) mm per joint. A frame counts as a
// success at threshold t when its worst joint error is <= t.
template <class T>
MetricsReport evaluate_predictions(const Tensor<T>& preds, const Tensor<T>& labels) {
  if (preds.rank() != 2 || preds.dim(1) != kOutputDim || !preds.same_shape(labels))
    throw std::invalid_argument("evaluate_predictions: need matching [N,18] tensors");
  const std::int64_t N = preds.dim(0);
  if (N < 1) throw std::invalid_argument("evaluate_predictions: empty prediction set");

  MetricsReport rep;
  rep.frames = N;
  std::array<std::int64_t, kCurveMaxMm + 1> hits{};
  for (std::int64_t n = 0; n < N; ++n) {
    double worst = 0.0;
    for (int j = 0; j < kNumJoints; ++j) {
      const std::size_t k = static_cast<std::size_t>(n * kOutputDim + 3 * j);
      const double dx = static_cast<double>(preds[k]) - static_cast<double>(labels[k]);
      const double dy =
          static_cast<double>(preds[k + 1]) - static_cast<double>(labels[k + 1]);
      const double dz =
          static_cast<double>(preds[k + 2]) - static_cast<double>(labels[k + 2]);
      const double err = std::sqrt(dx * dx + dy * dy + dz * dz);
      rep.per_joint_mm[j] += err;
      worst = std::max(worst, err);
    }
    for (int t = 0; t <= kCurveMaxMm; ++t)
      if (worst <= static_cast<double>(t)) ++hits[t];
  }
  for (int j = 0; j < kNumJoints; ++j) {
    rep.per_joint_mm[j] /= static_cast<double>(N);
    rep.overall_mm += rep.per_joint_mm[j];
  }
  rep.overall_mm /= kNumJoints;
  for (int t = 0; t <= kCurveMaxMm; ++t)
    rep.success_pct[t] = 100.0 * static_cast<double>(hits[t]) / static_cast<double>(N);
  return rep;
}

// ---------------------------------------------------------------------------
// batch assembly
// ---------------------------------------------------------------------------

struct Batch {
  TensorF left, right;  // [N,C,96,96], C per ModelConfig.use_mask_channel
  TensorF label_norm;   // [N,18] crop-normalized triplets
  TensorF label_3d;     // [N,18] mm
  std::vector<CropMeta> metas;
};

inline Batch assemble_batch(const Dataset& ds, const std::vector<std::size_t>& idxs,
                            const std::vector<int>& scales, bool use_mask) {
  if (idxs.empty()) throw std::invalid_argument("assemble_batch: empty index list");
  if (scales.size() != idxs.size())
    throw std::invalid_argument("assemble_batch: one scale choice per index required");
  const std::int64_t N = static_cast<std::int64_t>(idxs.size());
  const std::int64_t C = use_mask ? 2 : 1;
  const std::int64_t HW = static_cast<std::int64_t>(kInputSize) * kInputSize;

  Batch b;
  b.left = TensorF({N, C, kInputSize, kInputSize});
  b.right = TensorF({N, C, kInputSize, kInputSize});
  b.label_norm = TensorF({N, kOutputDim});
  b.label_3d = TensorF({N, kOutputDim});
  b.metas.resize(static_cast<std::size_t>(N));

  for (std::int64_t n = 0; n < N; ++n) {
    const Sample s = make_sample(ds, idxs[static_cast<std::size_t>(n)],
                                 scales[static_cast<std::size_t>(n)]);
    std::copy(s.left.data(), s.left.data() + C * HW, b.left.data() + n * C * HW);
    std::copy(s.right.data(), s.right.data() + C * HW, b.right.data() + n * C * HW);
    for (int k = 0; k < kOutputDim; ++k)
      b.label_norm[static_cast<std::size_t>(n * kOutputDim + k)] =
          static_cast<float>(s.label_norm[k]);
    for (int j = 0; j < kNumJoints; ++j) {
      const Point3D& p = s.label_3d[j];
      const std::size_t k = static_cast<std::size_t>(n * kOutputDim + 3 * j);
      b.label_3d[k] = static_cast<float>(p.x);
      b.label_3d[k + 1] = static_cast<float>(p.y);
      b.label_3d[k + 2] = static_cast<float>(p.z);
    }
    b.metas[static_cast<std::size_t>(n)] = s.meta;
  }
  return b;
}

// Evaluation always crops at the fixed 240 scale (no test-time augmentation).
// Frames are independent, so the index list can be split across threads; each
// worker gets its own model and dataset copy (forward passes cache
// activations, dataset caches frames). Chunk boundaries land on batch
// multiples so batch composition matches the single-threaded run.
inline MetricsReport evaluate_model(Model<float>& model, const StereoRig& rig,
                                    const Dataset& ds,
                                    const std::vector<std::size_t>& indices,
                                    std::int64_t batch_size = 32,
                                    DisparityGuard guard = DisparityGuard::clamp,
                                    int threads = 1) {
  if (indices.empty()) throw std::invalid_argument("evaluate_model: empty dataset");
  const std::int64_t N = static_cast<std::int64_t>(indices.size());
  TensorF preds({N, kOutputDim}), labels({N, kOutputDim});

  const auto eval_range = [&](Model<float>& m, const Dataset& d, std::int64_t lo,
                              std::int64_t hi) {
    for (std::int64_t at = lo; at < hi; at += batch_size) {
      const std::int64_t n = std::min<std::int64_t>(batch_size, hi - at);
      const std::vector<std::size_t> chunk(indices.begin() + at,
                                           indices.begin() + at + n);
      const std::vector<int> scales(static_cast<std::size_t>(n), kCropSizes[0]);
      const Batch b = assemble_batch(d, chunk, scales, m.config().use_mask_channel);
      const TensorF out = m.forward_3d(rig, b.metas, b.left, b.right, guard);
      std::copy(out.data(), out.data() + n * kOutputDim,
                preds.data() + at * kOutputDim);
      std::copy(b.label_3d.data(), b.label_3d.data() + n * kOutputDim,
                labels.data() + at * kOutputDim);
      for (std::size_t i = 0; i < chunk.size(); ++i) d.drop_frames(chunk[i]);
    }
  };

  const std::int64_t batches = (N + batch_size - 1) / batch_size;
  const int workers =
      std::max(1, static_cast<int>(std::min<std::int64_t>(threads, batches)));
  if (workers <= 1) {
    eval_range(model, ds, 0, N);
  } else {
    std::int64_t per = (N + workers - 1) / workers;
    per = ((per + batch_size - 1) / batch_size) * batch_size;
    std::vector<std::thread> pool;
    std::mutex err_mutex;
    std::exception_ptr first_error;
    for (int w = 0; w < workers; ++w) {
      const std::int64_t lo = w * per, hi = std::min<std::int64_t>(N, lo + per);
      if (lo >= hi) break;
      pool.emplace_back([&, lo, hi] {
        try {
          Model<float> local_model = model;
          const Dataset local_ds = ds;
          eval_range(local_model, local_ds, lo, hi);
        } catch (...) {
          std::lock_guard<std::mutex> g(err_mutex);
          if (!first_error) first_error = std::current_exception();
        }
      });
    }
    for (std::thread& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
  }
  return evaluate_predictions(preds, labels);
}

// ---------------------------------------------------------------------------
// report files
// ---------------------------------------------------------------------------

inline void write_metrics_csv(const MetricsReport& rep, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << "threshold_mm,success_pct\n";
  for (int t = 0; t <= kCurveMaxMm; ++t) {
    f << t << ",";
    f.precision(10);
    f << rep.success_pct[t] << "\n";
  }
  if (!f) throw std::runtime_error("short write to " + path);
}

inline void write_summary_json(const MetricsReport& rep, const std::string& path) {
  nlohmann::json j;
  j["frames"] = rep.frames;
  j["overall_mm"] = rep.overall_mm;
  nlohmann::json pj;
  for (int i = 0; i < kNumJoints; ++i) pj[kJointNames[i]] = rep.per_joint_mm[i];
  j["per_joint_mm"] = pj;
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << j.dump(2) << "\n";
  if (!f) throw std::runtime_error("short write to " + path);
}

}  // namespace tsbnet
