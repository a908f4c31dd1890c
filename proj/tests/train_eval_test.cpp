#include <gtest/gtest.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tsbnet/ablation.hpp"
#include "tsbnet/blas.hpp"
#include "tsbnet/checkpoint.hpp"
#include "tsbnet/eval.hpp"
#include "tsbnet/model.hpp"
#include "tsbnet/runconfig.hpp"
#include "tsbnet/synth_data.hpp"
#include "tsbnet/train.hpp"

namespace fs = std::filesystem;
using namespace tsbnet;

namespace {

fs::path temp_dir(const std::string& tag) {
  const fs::path p = fs::temp_directory_path() / ("tsbnet_te_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

// ---------------------------------------------------------------------------
// metrics
// ---------------------------------------------------------------------------

TEST(Metrics, WorkedSingleFrameExample) {
  // per-joint errors of exactly 1..6 mm, each along one axis
  TensorF labels({1, kOutputDim});
  for (std::size_t i = 0; i < labels.size(); ++i)
    labels[i] = 10.0f * static_cast<float>(i);
  TensorF preds = labels;
  for (int j = 0; j < kNumJoints; ++j)
    preds[static_cast<std::size_t>(3 * j + j % 3)] += static_cast<float>(j + 1);

  const MetricsReport rep = evaluate_predictions(preds, labels);
  ASSERT_EQ(rep.frames, 1);
  for (int j = 0; j < kNumJoints; ++j)
    EXPECT_NEAR(rep.per_joint_mm[j], j + 1.0, 1e-4) << "joint " << j;
  EXPECT_NEAR(rep.overall_mm, 3.5, 1e-4);
  EXPECT_DOUBLE_EQ(rep.success_pct[5], 0.0);
  EXPECT_DOUBLE_EQ(rep.success_pct[6], 100.0);
  for (int t = 0; t <= 5; ++t) EXPECT_DOUBLE_EQ(rep.success_pct[t], 0.0);
  for (int t = 6; t <= kCurveMaxMm; ++t) EXPECT_DOUBLE_EQ(rep.success_pct[t], 100.0);
}

TEST(Metrics, GroundTruthAsPredictionIsExactlyZero) {
  Rng rng = substream(7, "metrics-gt");
  TensorF labels({37, kOutputDim});
  for (std::size_t i = 0; i < labels.size(); ++i)
    labels[i] = static_cast<float>(rng.uniform(-500.0, 500.0));
  const TensorF preds = labels;

  const MetricsReport rep = evaluate_predictions(preds, labels);
  EXPECT_EQ(rep.frames, 37);
  EXPECT_EQ(rep.overall_mm, 0.0);
  for (int j = 0; j < kNumJoints; ++j) EXPECT_EQ(rep.per_joint_mm[j], 0.0);
  for (int t = 0; t <= kCurveMaxMm; ++t) EXPECT_EQ(rep.success_pct[t], 100.0);
}

TEST(Metrics, SuccessCurveIsMonotone) {
  Rng rng = substream(8, "metrics-curve");
  TensorF labels({50, kOutputDim}), preds({50, kOutputDim});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    labels[i] = static_cast<float>(rng.uniform(-100.0, 100.0));
    preds[i] = labels[i] + static_cast<float>(rng.normal(0.0, 15.0));
  }
  const MetricsReport rep = evaluate_predictions(preds, labels);
  for (int t = 1; t <= kCurveMaxMm; ++t)
    EXPECT_GE(rep.success_pct[t], rep.success_pct[t - 1]) << "threshold " << t;
  EXPECT_GE(rep.success_pct[0], 0.0);
  EXPECT_LE(rep.success_pct[kCurveMaxMm], 100.0);
  double mean = 0.0;
  for (int j = 0; j < kNumJoints; ++j) mean += rep.per_joint_mm[j];
  EXPECT_NEAR(rep.overall_mm, mean / kNumJoints, 1e-12);
}

TEST(Metrics, RejectsMismatchedShapes) {
  TensorF a({1, kOutputDim}), b({2, kOutputDim});
  EXPECT_THROW(evaluate_predictions(a, b), std::invalid_argument);
  TensorF flat({kOutputDim});
  EXPECT_THROW(evaluate_predictions(flat, flat), std::invalid_argument);
  TensorF wide({2, kOutputDim + 1});
  EXPECT_THROW(evaluate_predictions(wide, wide), std::invalid_argument);
}

TEST(Metrics, ReportWriters) {
  MetricsReport rep;
  rep.frames = 4;
  rep.overall_mm = 12.25;
  for (int j = 0; j < kNumJoints; ++j) rep.per_joint_mm[j] = 10.0 + j;
  for (int t = 0; t <= kCurveMaxMm; ++t) rep.success_pct[t] = t > 12 ? 100.0 : 25.0;

  const fs::path dir = temp_dir("writers");
  write_metrics_csv(rep, (dir / "metrics.csv").string());
  write_summary_json(rep, (dir / "summary.json").string());

  std::ifstream csv(dir / "metrics.csv");
  std::string line;
  ASSERT_TRUE(std::getline(csv, line));
  EXPECT_EQ(line, "threshold_mm,success_pct");
  int rows = 0;
  while (std::getline(csv, line)) {
    if (!line.empty()) ++rows;
  }
  EXPECT_EQ(rows, kCurveMaxMm + 1);

  const auto j = nlohmann::json::parse(slurp(dir / "summary.json"));
  EXPECT_EQ(j.at("frames").get<std::int64_t>(), 4);
  EXPECT_DOUBLE_EQ(j.at("overall_mm").get<double>(), 12.25);
  for (int i = 0; i < kNumJoints; ++i)
    EXPECT_DOUBLE_EQ(j.at("per_joint_mm").at(kJointNames[i]).get<double>(),
                     10.0 + i);
  fs::remove_all(dir);
}

// ---------------------------------------------------------------------------
// BDM gradient vs depth
// ---------------------------------------------------------------------------

TEST(BdmGradient, NormScalesWithDepth) {
  const StereoRig rig = default_rig();
  const PointGrad gx{1.0, 0.0, 0.0};
  auto norm_at = [&](double z) {
    const PixelTriplet trip{rig.w / 2.0, rig.f * rig.b / (rig.lambda * z),
                            rig.h / 2.0};
    const TripletGrad g = bdm_backward(rig, trip, gx, DisparityGuard::strict);
    return std::sqrt(g.s * g.s + g.q * g.q + g.t * g.t);
  };
  const double ratio = norm_at(450.0) / norm_at(300.0);
  EXPECT_NEAR(ratio, 1.5, 0.15);
  EXPECT_NEAR(ratio, 450.0 / 300.0, 1e-12);
}

// ---------------------------------------------------------------------------
// training (shared small dataset)
// ---------------------------------------------------------------------------

class Training : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    pin_blas_single_thread();
    dir_ = new fs::path(temp_dir("train_ds"));
    generate_dataset(12, "train", 41, dir_->string(), false);
    generate_dataset(4, "test", 42, dir_->string(), true);
    ds_ = new Dataset(load_dataset(dir_->string()));
  }
  static void TearDownTestSuite() {
    fs::remove_all(*dir_);
    delete ds_;
    delete dir_;
    ds_ = nullptr;
    dir_ = nullptr;
  }
  static const Dataset& ds() { return *ds_; }

  static ModelConfig small_config() {
    ModelConfig cfg;
    cfg.channel_multiplier = 0.25;
    cfg.use_mask_channel = false;
    cfg.use_residual = true;
    cfg.attach_bdm = false;
    return cfg;
  }
  static TrainConfig quick(std::int64_t iters, std::int64_t batch = 8) {
    TrainConfig tc;
    tc.batch_size = batch;
    tc.max_iters = iters;
    tc.seed = 5;
    return tc;
  }

  static Dataset* ds_;
  static fs::path* dir_;
};

Dataset* Training::ds_ = nullptr;
fs::path* Training::dir_ = nullptr;

TEST_F(Training, ZeroInitHeadGivesMeanSquaredLabelLoss) {
  ModelF model(small_config(), 5);
  for (const auto& e : model.entries())
    if (e.name == "head.fc3.w" || e.name == "head.fc3.b")
      for (std::size_t i = 0; i < e.value->size(); ++i) (*e.value)[i] = 0.0f;

  const TrainConfig tc = quick(1);
  PhaseOptions opt;
  opt.phase = Phase::pretrain;
  const TrainResult res = train_phase(model, ds(), ds().rig, tc, opt);

  // replicate the first batch and compare against a zero prediction
  detail::BatchCursor cursor(split_indices(ds(), "train"), opt.augment, tc.seed);
  std::vector<std::size_t> idxs;
  std::vector<int> scales;
  cursor.next(static_cast<std::size_t>(tc.batch_size), idxs, scales);
  const Batch b = assemble_batch(ds(), idxs, scales, false);
  const TensorF zeros({static_cast<std::int64_t>(idxs.size()), kOutputDim});
  const double expected = mse_loss(zeros, b.label_norm).loss;

  EXPECT_DOUBLE_EQ(res.first_loss, expected);
  EXPECT_GT(res.first_loss, 0.0);
}

TEST_F(Training, LossDecreasesAndTrajectoryIsDeterministic) {
  const TrainConfig tc = quick(30);
  PhaseOptions opt;
  opt.phase = Phase::pretrain;

  ModelF a(small_config(), 5);
  const TrainResult ra = train_phase(a, ds(), ds().rig, tc, opt);
  ModelF b(small_config(), 5);
  const TrainResult rb = train_phase(b, ds(), ds().rig, tc, opt);

  ASSERT_EQ(ra.losses.size(), 30u);
  ASSERT_EQ(rb.losses.size(), 30u);
  for (std::size_t i = 0; i < ra.losses.size(); ++i)
    EXPECT_EQ(ra.losses[i], rb.losses[i]) << "iteration " << i;

  double tail = 0.0;
  for (std::size_t i = ra.losses.size() - 5; i < ra.losses.size(); ++i)
    tail += ra.losses[i];
  EXPECT_LT(tail / 5.0, ra.first_loss);
}

TEST_F(Training, FinetuneStartsFromPretrainedLossWithoutJump) {
  const fs::path out = temp_dir("nojump");
  ModelF pre(small_config(), 5);
  TrainConfig tc = quick(5);
  PhaseOptions popt;
  popt.phase = Phase::pretrain;
  popt.out_dir = (out / "pre").string();
  train_phase(pre, ds(), ds().rig, tc, popt);
  const std::string ckpt = (out / "pre" / "final.ckpt").string();

  // finetune config: same seed so the first batch is reproducible
  TrainConfig ftc = quick(1);
  ftc.lr0 = 1e-7;

  const CheckpointContents c = read_checkpoint(ckpt);
  ModelConfig mc = c.config;
  mc.attach_bdm = true;

  ModelF manual(mc, 0);
  load_checkpoint_into(manual, ckpt);
  detail::BatchCursor cursor(split_indices(ds(), "train"), true, ftc.seed);
  std::vector<std::size_t> idxs;
  std::vector<int> scales;
  cursor.next(static_cast<std::size_t>(ftc.batch_size), idxs, scales);
  const Batch b = assemble_batch(ds(), idxs, scales, false);
  const TensorF pred3d = manual.forward_3d(ds().rig, b.metas, b.left, b.right);
  const double expected = mse_loss(pred3d, b.label_3d).loss;

  ModelF fine(mc, 0);
  load_checkpoint_into(fine, ckpt);
  PhaseOptions fopt;
  fopt.phase = Phase::finetune;
  const TrainResult res = train_phase(fine, ds(), ds().rig, ftc, fopt);

  EXPECT_DOUBLE_EQ(res.first_loss, expected);
  fs::remove_all(out);
}

TEST_F(Training, FinetuneRequiresTriangulationLayer) {
  ModelF model(small_config(), 5);  // attach_bdm = false
  PhaseOptions opt;
  opt.phase = Phase::finetune;
  EXPECT_THROW(train_phase(model, ds(), ds().rig, quick(1), opt),
               std::invalid_argument);
}

TEST_F(Training, NonFiniteLossAbortsWithDiagnostics) {
  ModelF model(small_config(), 5);
  TrainConfig tc = quick(20);
  tc.lr0 = 1e8;
  PhaseOptions opt;
  opt.phase = Phase::pretrain;
  try {
    train_phase(model, ds(), ds().rig, tc, opt);
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_GE(e.iteration(), 1);
    EXPECT_GT(e.lr(), 0.0);
    EXPECT_NE(std::string(e.what()).find("non-finite loss at iteration"),
              std::string::npos);
  }
}

TEST_F(Training, WritesLogAndPeriodicCheckpoints) {
  const fs::path out = temp_dir("ckpts");
  ModelF model(small_config(), 5);
  TrainConfig tc = quick(5);
  PhaseOptions opt;
  opt.phase = Phase::pretrain;
  opt.out_dir = out.string();
  opt.checkpoint_every = 2;
  const TrainResult res = train_phase(model, ds(), ds().rig, tc, opt);

  EXPECT_TRUE(fs::exists(out / "ckpt_000002.ckpt"));
  EXPECT_TRUE(fs::exists(out / "ckpt_000004.ckpt"));
  EXPECT_TRUE(fs::exists(out / "final.ckpt"));
  EXPECT_EQ(res.checkpoint_path, (out / "final.ckpt").string());

  std::ifstream log(out / "train_log.csv");
  std::string line;
  ASSERT_TRUE(std::getline(log, line));
  EXPECT_EQ(line, "iter,lr,loss,grad_norm");
  std::vector<std::string> rows;
  while (std::getline(log, line))
    if (!line.empty()) rows.push_back(line);
  ASSERT_EQ(rows.size(), 5u);
  std::istringstream first(rows[0]);
  std::string iter_s, lr_s;
  std::getline(first, iter_s, ',');
  std::getline(first, lr_s, ',');
  EXPECT_EQ(iter_s, "0");
  EXPECT_DOUBLE_EQ(std::stod(lr_s), tc.lr0);
  fs::remove_all(out);
}

TEST_F(Training, EarlyStopOnLossTarget) {
  const fs::path out = temp_dir("earlystop");
  ModelF model(small_config(), 5);
  PhaseOptions opt;
  opt.phase = Phase::pretrain;
  opt.out_dir = out.string();
  opt.stop_loss = 1e6;  // any finite first loss satisfies this
  const TrainResult res = train_phase(model, ds(), ds().rig, quick(50), opt);
  EXPECT_EQ(res.iterations, 1);
  EXPECT_EQ(res.losses.size(), 1u);
  EXPECT_TRUE(fs::exists(out / "final.ckpt"));
  fs::remove_all(out);
}

TEST_F(Training, CheckpointCarriesRigProvenance) {
  const fs::path out = temp_dir("rigprov");
  ModelF model(small_config(), 5);
  const std::string path = (out / "m.ckpt").string();
  save_checkpoint(model, path, true, &ds().rig);

  const CheckpointContents c = read_checkpoint(path);
  ASSERT_TRUE(c.has_rig);
  EXPECT_EQ(c.rig.f, ds().rig.f);
  EXPECT_EQ(c.rig.b, ds().rig.b);
  EXPECT_EQ(c.rig.lambda, ds().rig.lambda);
  EXPECT_EQ(c.rig.w, ds().rig.w);
  EXPECT_EQ(c.rig.h, ds().rig.h);

  save_checkpoint(model, path, true);
  EXPECT_FALSE(read_checkpoint(path).has_rig);
  fs::remove_all(out);
}

TEST_F(Training, EvaluateModelIsDeterministicAndWellFormed) {
  ModelConfig cfg = small_config();
  cfg.attach_bdm = true;
  ModelF model(cfg, 5);
  const std::vector<std::size_t> test_idx = split_indices(ds(), "test");
  ASSERT_EQ(test_idx.size(), 4u);

  const MetricsReport a = evaluate_model(model, ds().rig, ds(), test_idx);
  const MetricsReport b = evaluate_model(model, ds().rig, ds(), test_idx);
  EXPECT_EQ(a.frames, 4);
  EXPECT_EQ(a.overall_mm, b.overall_mm);
  for (int j = 0; j < kNumJoints; ++j) {
    EXPECT_TRUE(std::isfinite(a.per_joint_mm[j]));
    EXPECT_EQ(a.per_joint_mm[j], b.per_joint_mm[j]);
  }
  for (int t = 1; t <= kCurveMaxMm; ++t)
    EXPECT_GE(a.success_pct[t], a.success_pct[t - 1]);
}

// Worker chunks start on batch boundaries, so a threaded run sees the same
// batch compositions as a sequential one and must reproduce it exactly.
TEST_F(Training, ThreadedEvaluationMatchesSequential) {
  ModelConfig cfg = small_config();
  cfg.attach_bdm = true;
  ModelF model(cfg, 5);
  const std::vector<std::size_t> test_idx = split_indices(ds(), "test");
  ASSERT_EQ(test_idx.size(), 4u);

  const MetricsReport seq = evaluate_model(model, ds().rig, ds(), test_idx, 2);
  const MetricsReport par = evaluate_model(model, ds().rig, ds(), test_idx, 2,
                                           DisparityGuard::clamp, 2);
  EXPECT_EQ(par.frames, seq.frames);
  EXPECT_DOUBLE_EQ(par.overall_mm, seq.overall_mm);
  for (int j = 0; j < kNumJoints; ++j)
    EXPECT_DOUBLE_EQ(par.per_joint_mm[j], seq.per_joint_mm[j]);
  for (int t = 0; t <= kCurveMaxMm; ++t)
    EXPECT_DOUBLE_EQ(par.success_pct[t], seq.success_pct[t]);
}

TEST_F(Training, CustomRigPropagatesToGeneratedData) {
  const fs::path out = temp_dir("customrig");
  StereoRig rig = default_rig();
  rig.b = 60.0;
  generate_dataset(2, "train", 9, out.string(), false, &rig);
  const Dataset d2 = load_dataset(out.string());
  EXPECT_EQ(d2.rig.b, 60.0);
  EXPECT_NO_THROW(validate_dataset(d2));
  fs::remove_all(out);
}

// ---------------------------------------------------------------------------
// ablation ladder
// ---------------------------------------------------------------------------

TEST(Ablation, LadderMatchesPublishedTable) {
  const std::vector<AblationRowSpec> rows = ablation_ladder();
  ASSERT_EQ(rows.size(), 6u);

  const char* names[6] = {"baseline", "+multi-scale", "+more channels",
                          "+mask images", "+residual connection", "+bdm finetune"};
  const double refs[6] = {13.6, 13.2, 12.3, 11.4, 11.2, 10.9};
  for (int i = 0; i < 6; ++i) {
    EXPECT_EQ(rows[i].name, names[i]);
    EXPECT_DOUBLE_EQ(rows[i].paper_reference_mm, refs[i]);
  }

  EXPECT_DOUBLE_EQ(rows[0].model.channel_multiplier, 0.5);
  EXPECT_FALSE(rows[0].model.use_mask_channel);
  EXPECT_FALSE(rows[0].model.use_residual);
  EXPECT_FALSE(rows[0].augment);
  EXPECT_FALSE(rows[0].finetune);

  for (int i = 1; i < 6; ++i) {
    int diffs = 0;
    if (rows[i].model.channel_multiplier != rows[i - 1].model.channel_multiplier)
      ++diffs;
    if (rows[i].model.use_mask_channel != rows[i - 1].model.use_mask_channel) ++diffs;
    if (rows[i].model.use_residual != rows[i - 1].model.use_residual) ++diffs;
    if (rows[i].augment != rows[i - 1].augment) ++diffs;
    if (rows[i].finetune != rows[i - 1].finetune) ++diffs;
    EXPECT_EQ(diffs, 1) << "row " << i << " must flip exactly one switch";
  }
  EXPECT_TRUE(rows[5].finetune);
}

TEST(Ablation, CsvWriterMarksFailuresAndNonReproducibility) {
  std::vector<AblationResult> results(2);
  results[0].spec = ablation_ladder()[0];
  results[0].mean_mm = 21.5;
  results[1].spec = ablation_ladder()[1];
  results[1].failed = true;
  results[1].error = "boom";

  const fs::path dir = temp_dir("abl_csv");
  const std::string path = (dir / "ablation.csv").string();
  write_ablation_csv(results, path);

  std::ifstream f(path);
  std::string line;
  ASSERT_TRUE(std::getline(f, line));
  EXPECT_EQ(line,
            "strategy,mean_error_mm,paper_reference_mm,reference_reproducible,status");
  ASSERT_TRUE(std::getline(f, line));
  EXPECT_EQ(line, "\"baseline\",21.5,13.6,no,ok");
  ASSERT_TRUE(std::getline(f, line));
  EXPECT_EQ(line, "\"+multi-scale\",,13.2,no,failed");
  fs::remove_all(dir);
}

// ---------------------------------------------------------------------------
// run configuration
// ---------------------------------------------------------------------------

TEST(RunConfigTest, DefaultsMatchDeskSchedule) {
  const RunConfig c;
  EXPECT_EQ(c.train.batch_size, 32);
  EXPECT_DOUBLE_EQ(c.train.lr0, 0.005);
  EXPECT_DOUBLE_EQ(c.train.momentum, 0.9);
  EXPECT_DOUBLE_EQ(c.train.weight_decay, 0.0005);
  EXPECT_DOUBLE_EQ(c.train.lr_decay_factor, 0.1);
  EXPECT_EQ(c.train.lr_decay_every, 2000);
  EXPECT_EQ(c.train.max_iters, 6000);
  EXPECT_TRUE(c.augment);
}

TEST(RunConfigTest, KeyValueParsing) {
  RunConfig c;
  apply_config_kv(c, "channel_multiplier", "0.25");
  apply_config_kv(c, "use_mask_channel", "yes");
  apply_config_kv(c, "use_residual", "off");
  apply_config_kv(c, "batch_size", "16");
  apply_config_kv(c, "lr0", "0.01");
  apply_config_kv(c, "seed", "99");
  apply_config_kv(c, "augment", "0");
  apply_config_kv(c, "checkpoint_every", "500");
  EXPECT_DOUBLE_EQ(c.model.channel_multiplier, 0.25);
  EXPECT_TRUE(c.model.use_mask_channel);
  EXPECT_FALSE(c.model.use_residual);
  EXPECT_EQ(c.train.batch_size, 16);
  EXPECT_DOUBLE_EQ(c.train.lr0, 0.01);
  EXPECT_EQ(c.train.seed, 99u);
  EXPECT_FALSE(c.augment);
  EXPECT_EQ(c.checkpoint_every, 500);

  EXPECT_THROW(apply_config_kv(c, "no_such_key", "1"), std::invalid_argument);
  EXPECT_THROW(apply_config_kv(c, "lr0", "fast"), std::invalid_argument);
  EXPECT_THROW(apply_config_kv(c, "use_mask_channel", "maybe"),
               std::invalid_argument);
}

TEST(RunConfigTest, FileGrammarAndPrecedence) {
  const fs::path dir = temp_dir("cfg");
  const fs::path cfg = dir / "run.cfg";
  {
    std::ofstream f(cfg);
    f << "# training overrides\n"
      << "\n"
      << "batch_size 16\n"
      << "lr0 = 0.25\n"
      << "use_mask_channel yes\n";
  }
  RunConfig c;
  apply_config_file(c, cfg.string());
  EXPECT_EQ(c.train.batch_size, 16);
  EXPECT_DOUBLE_EQ(c.train.lr0, 0.25);
  EXPECT_TRUE(c.model.use_mask_channel);

  // flag overrides win over the file
  apply_config_kv(c, "lr0", "0.5");
  EXPECT_DOUBLE_EQ(c.train.lr0, 0.5);

  {
    std::ofstream f(cfg);
    f << "batch_size 16 extra\n";
  }
  try {
    apply_config_file(c, cfg.string());
    FAIL() << "expected trailing-token rejection";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find(":1:"), std::string::npos);
  }

  {
    std::ofstream f(cfg);
    f << "# fine\n"
      << "lr0\n";
  }
  try {
    apply_config_file(c, cfg.string());
    FAIL() << "expected missing-value rejection";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos);
  }

  EXPECT_THROW(apply_config_file(c, (dir / "absent.cfg").string()),
               std::runtime_error);
  fs::remove_all(dir);
}

TEST(RunConfigTest, JsonEchoAndManifest) {
  RunConfig c;
  c.model.channel_multiplier = 0.5;
  c.train.max_iters = 123;
  const nlohmann::json j = config_to_json(c);
  EXPECT_DOUBLE_EQ(j.at("channel_multiplier").get<double>(), 0.5);
  EXPECT_EQ(j.at("max_iters").get<std::int64_t>(), 123);
  EXPECT_EQ(j.size(), 15u);

  RunManifest m;
  m.command = "train --phase pretrain";
  m.config = j;
  m.seed = 7;
  m.inputs = {"data"};
  m.outputs = {"out/final.ckpt"};
  m.started = iso_timestamp_now();
  m.finished = iso_timestamp_now();

  const fs::path dir = temp_dir("manifest");
  const std::string path = (dir / "run_manifest.json").string();
  write_run_manifest(m, path);
  EXPECT_FALSE(fs::exists(path + ".tmp"));

  const auto parsed = nlohmann::json::parse(slurp(path));
  EXPECT_EQ(parsed.at("command").get<std::string>(), "train --phase pretrain");
  EXPECT_EQ(parsed.at("version").get<std::string>(), kToolVersion);
  EXPECT_EQ(parsed.at("seed").get<std::uint64_t>(), 7u);
  EXPECT_EQ(parsed.at("config").at("max_iters").get<std::int64_t>(), 123);
  ASSERT_EQ(parsed.at("inputs").size(), 1u);
  EXPECT_EQ(parsed.at("outputs").at(0).get<std::string>(), "out/final.ckpt");
  EXPECT_EQ(parsed.at("started").get<std::string>().size(), 20u);
  fs::remove_all(dir);
}

}  // namespace
