#pragma once

#include <cmath>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "tsbnet/eval.hpp"
#include "tsbnet/model.hpp"
#include "tsbnet/runconfig.hpp"
#include "tsbnet/train.hpp"

namespace tsbnet {

// One incremental strategy: the configuration it trains plus the published
// reference error it lines up against (not reproducible on synthetic data).
struct AblationRowSpec {
  std::string name;
  std::string dir_name;
  ModelConfig model;
  bool augment = false;
  bool finetune = false;
  double paper_reference_mm = 0.0;
};

// Each row differs from its predecessor by exactly one switch.
inline std::vector<AblationRowSpec> ablation_ladder() {
  std::vector<AblationRowSpec> rows;
  ModelConfig cfg;
  cfg.channel_multiplier = 0.5;
  cfg.use_mask_channel = false;
  cfg.use_residual = false;

  rows.push_back({"baseline", "row1_baseline", cfg, false, false, 13.6});
  rows.push_back({"+multi-scale", "row2_multi_scale", cfg, true, false, 13.2});
  cfg.channel_multiplier = 1.0;
  rows.push_back({"+more channels", "row3_more_channels", cfg, true, false, 12.3});
  cfg.use_mask_channel = true;
  rows.push_back({"+mask images", "row4_mask_images", cfg, true, false, 11.4});
  cfg.use_residual = true;
  rows.push_back({"+residual connection", "row5_residual", cfg, true, false, 11.2});
  rows.push_back({"+bdm finetune", "row6_bdm_finetune", cfg, true, true, 10.9});
  return rows;
}

struct AblationResult {
  AblationRowSpec spec;
  double mean_mm = std::numeric_limits<double>::quiet_NaN();
  bool failed = false;
  std::string error;
  std::string row_dir;
  std::string started, finished;
};

// Trains and evaluates every ladder row independently. A failing row is
// recorded and the run continues.
inline std::vector<AblationResult> run_ablation(const Dataset& ds,
                                                const TrainConfig& pretrain_tc,
                                                const TrainConfig& finetune_tc,
                                                const std::string& out_dir) {
  const StereoRig& rig = ds.rig;
  const std::vector<std::size_t> test_idx = split_indices(ds, "test");
  std::vector<AblationResult> results;

  for (const AblationRowSpec& spec : ablation_ladder()) {
    AblationResult res;
    res.spec = spec;
    res.row_dir = out_dir.empty() ? "" : out_dir + "/" + spec.dir_name;
    res.started = iso_timestamp_now();
    try {
      Model<float> model(spec.model, pretrain_tc.seed);

      PhaseOptions pre;
      pre.phase = Phase::pretrain;
      pre.augment = spec.augment;
      pre.out_dir = res.row_dir.empty() ? "" : res.row_dir + "/pretrain";
      train_phase(model, ds, rig, pretrain_tc, pre);

      if (spec.finetune) {
        PhaseOptions fin;
        fin.phase = Phase::finetune;
        fin.augment = spec.augment;
        fin.out_dir = res.row_dir.empty() ? "" : res.row_dir + "/finetune";
        train_phase(model, ds, rig, finetune_tc, fin);
      }

      res.mean_mm = evaluate_model(model, rig, ds, test_idx).overall_mm;
      if (!std::isfinite(res.mean_mm))
        throw std::runtime_error("non-finite evaluation result");
    } catch (const std::exception& e) {
      res.failed = true;
      res.error = e.what();
    }
    res.finished = iso_timestamp_now();
    results.push_back(std::move(res));
  }
  return results;
}

inline void write_ablation_csv(const std::vector<AblationResult>& results,
                               const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << "strategy,mean_error_mm,paper_reference_mm,reference_reproducible,status\n";
  f.precision(6);
  for (const AblationResult& r : results) {
    f << "\"" << r.spec.name << "\",";
    if (r.failed)
      f << "";
    else
      f << r.mean_mm;
    f << "," << r.spec.paper_reference_mm << ",no,"
      << (r.failed ? "failed" : "ok") << "\n";
  }
  if (!f) throw std::runtime_error("short write to " + path);
}

}  // namespace tsbnet
