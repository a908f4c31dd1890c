#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tsbnet/ablation.hpp"
#include "tsbnet/checkpoint.hpp"
#include "tsbnet/eval.hpp"
#include "tsbnet/gradcheck.hpp"
#include "tsbnet/model.hpp"
#include "tsbnet/runconfig.hpp"
#include "tsbnet/synth_data.hpp"
#include "tsbnet/train.hpp"

namespace {

using namespace tsbnet;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;
constexpr int kExitNumerical = 4;
constexpr int kExitGradcheck = 5;

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

struct GenDataArgs {
  int count = 0;
  std::string split = "train";
  std::uint64_t seed = 1;
  std::string out;
  std::string rig_path;
  bool append = false;
  int threads = 1;
};

int cmd_gen_data(const GenDataArgs& a) {
  if (a.count < 1) throw std::invalid_argument("--count must be >= 1");
  if (a.split != "train" && a.split != "test")
    throw std::invalid_argument("--split must be train or test");

  RunManifest man;
  man.command = "gen-data";
  man.seed = a.seed;
  man.started = iso_timestamp_now();
  man.config = nlohmann::json{
      {"count", a.count}, {"split", a.split}, {"threads", a.threads}};
  if (!a.rig_path.empty()) man.inputs.push_back(a.rig_path);

  StereoRig rig = default_rig();
  if (!a.rig_path.empty()) rig = load_rig_json(a.rig_path);
  const Dataset ds = generate_dataset(a.count, a.split, a.seed, a.out, a.append,
                                      &rig, a.threads);

  man.outputs = {a.out + "/manifest.jsonl", a.out + "/rig.json", a.out + "/images"};
  man.finished = iso_timestamp_now();
  write_run_manifest(man, a.out + "/run_manifest_" + a.split + ".json");

  std::cout << "wrote " << ds.records.size() << " records\n"
            << "manifest: " << a.out << "/manifest.jsonl\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string phase;
  std::string data;
  std::string init;
  std::string config_file;
  std::string out;
  std::vector<std::pair<std::string, std::string>> overrides;
  int threads = 1;  // accepted for interface symmetry; training stays single-threaded
};

int cmd_train(const TrainArgs& a) {
  if (a.phase != "pretrain" && a.phase != "finetune")
    throw std::invalid_argument("--phase must be pretrain or finetune");
  if (a.phase == "finetune" && a.init.empty())
    throw std::invalid_argument("finetune requires --init <checkpoint>");

  RunConfig cfg;
  if (a.phase == "finetune") {
    // the checkpoint defines the architecture; file/flags override the rest
    const CheckpointContents c = read_checkpoint(a.init);
    cfg.model = c.config;
    cfg.model.attach_bdm = true;
  }
  if (!a.config_file.empty()) apply_config_file(cfg, a.config_file);
  for (const auto& kv : a.overrides) apply_config_kv(cfg, kv.first, kv.second);

  const Dataset ds = load_dataset(a.data);
  std::filesystem::create_directories(a.out);

  ModelF model(cfg.model, cfg.train.seed);
  if (!a.init.empty()) load_checkpoint_into(model, a.init);

  PhaseOptions opt;
  opt.phase = a.phase == "pretrain" ? Phase::pretrain : Phase::finetune;
  opt.augment = cfg.augment;
  opt.checkpoint_every = cfg.checkpoint_every;
  opt.out_dir = a.out;

  RunManifest man;
  man.command = "train --phase " + a.phase;
  man.config = config_to_json(cfg);
  man.seed = cfg.train.seed;
  man.inputs = {a.data};
  if (!a.init.empty()) man.inputs.push_back(a.init);
  if (!a.config_file.empty()) man.inputs.push_back(a.config_file);
  man.started = iso_timestamp_now();

  const TrainResult res = train_phase(model, ds, ds.rig, cfg.train, opt);

  man.outputs = {res.checkpoint_path, res.log_path};
  man.finished = iso_timestamp_now();
  write_run_manifest(man, a.out + "/run_manifest.json");

  std::printf("%s done: %" PRId64 " iterations, loss %.6g -> %.6g\n",
              a.phase.c_str(), res.iterations, res.first_loss, res.final_loss);
  std::cout << "checkpoint: " << res.checkpoint_path << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string ckpt;
  std::string data;
  std::string out;
  std::string split = "test";
  bool inject_ground_truth = false;
  int threads = 1;
};

int cmd_eval(const EvalArgs& a) {
  const Dataset ds = load_dataset(a.data);
  const std::vector<std::size_t> idx = split_indices(ds, a.split);
  if (idx.empty())
    throw std::invalid_argument("dataset has no '" + a.split + "' records");
  std::filesystem::create_directories(a.out);

  RunManifest man;
  man.command = "eval";
  man.inputs = {a.data};
  man.started = iso_timestamp_now();

  MetricsReport rep;
  if (a.inject_ground_truth) {
    // ground truth fed through the metrics path: must come out exactly zero
    const std::int64_t N = static_cast<std::int64_t>(idx.size());
    TensorF labels({N, kOutputDim});
    for (std::int64_t n = 0; n < N; ++n)
      for (int j = 0; j < kNumJoints; ++j) {
        const Point3D& p = ds.records[idx[static_cast<std::size_t>(n)]].joints_3d[j];
        const std::size_t k = static_cast<std::size_t>(n * kOutputDim + 3 * j);
        labels[k] = static_cast<float>(p.x);
        labels[k + 1] = static_cast<float>(p.y);
        labels[k + 2] = static_cast<float>(p.z);
      }
    rep = evaluate_predictions(labels, labels);
    man.config = nlohmann::json{{"inject_ground_truth", true},
                                {"split", a.split},
                                {"threads", a.threads}};
  } else {
    if (a.ckpt.empty()) throw std::invalid_argument("eval requires --ckpt");
    const CheckpointContents c = read_checkpoint(a.ckpt);
    if (c.has_rig) {
      const StereoRig& r = c.rig;
      if (r.f != ds.rig.f || r.b != ds.rig.b || r.lambda != ds.rig.lambda ||
          r.w != ds.rig.w || r.h != ds.rig.h)
        throw std::invalid_argument(
            "checkpoint was trained against a different rig than this dataset");
    }
    ModelConfig mc = c.config;
    mc.attach_bdm = true;
    ModelF model(mc, 0);
    load_checkpoint_into(model, a.ckpt);
    rep = evaluate_model(model, ds.rig, ds, idx, 32, DisparityGuard::clamp,
                         a.threads);
    man.inputs.push_back(a.ckpt);
    man.config = nlohmann::json{{"inject_ground_truth", false},
                                {"split", a.split},
                                {"threads", a.threads}};
  }

  write_metrics_csv(rep, a.out + "/metrics.csv");
  write_summary_json(rep, a.out + "/summary.json");
  man.outputs = {a.out + "/metrics.csv", a.out + "/summary.json"};
  man.finished = iso_timestamp_now();
  write_run_manifest(man, a.out + "/run_manifest.json");

  std::printf("frames %" PRId64 ", mean error %.4f mm\n", rep.frames, rep.overall_mm);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

template <class T>
void fill_uniform(Tensor<T>& t, Rng& rng, double lo, double hi) {
  for (std::size_t i = 0; i < t.size(); ++i)
    t[i] = static_cast<T>(rng.uniform(lo, hi));
}

template <class T>
void fill_away_from_zero(Tensor<T>& t, Rng& rng) {
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double mag = rng.uniform(0.2, 1.0);
    t[i] = static_cast<T>(rng.uniform() < 0.5 ? -mag : mag);
  }
}

double weighted_sum(const TensorD& t, const TensorD& w) {
  double s = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) s += t[i] * w[i];
  return s;
}

struct GradcheckOutcome {
  GradCheckReport report;
  double tolerance;
};

GradcheckOutcome gradcheck_bdm(std::uint64_t seed, int trials) {
  const StereoRig rig = default_rig();
  GradCheckReport rep;
  Rng rng = substream(seed, "gc-bdm");
  double worst = 0.0;
  std::string where;
  for (int k = 0; k < trials; ++k) {
    const PixelTriplet trip{rng.uniform(40.0, 600.0), rng.uniform(10.0, 120.0),
                            rng.uniform(40.0, 440.0)};
    const PointGrad go{rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0),
                       rng.uniform(-1.0, 1.0)};
    const TripletGrad g = bdm_backward(rig, trip, go, DisparityGuard::strict);
    const double h = 1e-4;
    auto loss = [&](const PixelTriplet& t) {
      const Point3D p = bdm_forward(rig, t, DisparityGuard::strict);
      return go.x * p.x + go.y * p.y + go.z * p.z;
    };
    const double analytic[3] = {g.s, g.q, g.t};
    for (int c = 0; c < 3; ++c) {
      PixelTriplet lo = trip, hi = trip;
      (c == 0 ? lo.s : c == 1 ? lo.q : lo.t) -= h;
      (c == 0 ? hi.s : c == 1 ? hi.q : hi.t) += h;
      const double numeric = (loss(hi) - loss(lo)) / (2 * h);
      const double rel = rel_error(analytic[c], numeric);
      if (rel > worst) {
        worst = rel;
        where = "triplet " + std::to_string(k) + " component " +
                (c == 0 ? std::string("s") : c == 1 ? std::string("q") : std::string("t"));
      }
    }
  }
  rep.max_rel = worst;
  rep.tensor = where;
  return {rep, 1e-6};
}

GradcheckOutcome gradcheck_conv(std::uint64_t seed, int trials) {
  Rng rng = substream(seed, "gc-conv");
  TensorD x({2, 3, 6, 6}), w({4, 3, 3, 3}), b({4}), gy({2, 4, 6, 6});
  fill_uniform(x, rng, -1, 1);
  fill_uniform(w, rng, -1, 1);
  fill_uniform(b, rng, -1, 1);
  fill_uniform(gy, rng, -1, 1);
  Conv2dGrads<double> grads = conv2d_backward(x, w, gy, true);
  auto loss = [&]() { return weighted_sum(conv2d_forward(x, w, b), gy); };
  TensorD gb = grads.gb;
  GradCheckReport rep;
  grad_check_tensor(loss, x, grads.gx, "conv.x", trials, 1e-6, rng, rep);
  grad_check_tensor(loss, w, grads.gw, "conv.w", trials, 1e-6, rng, rep);
  // bias gradient: loss is linear in b through the bias add
  grad_check_tensor(loss, b, gb, "conv.b", trials, 1e-6, rng, rep);
  return {rep, 1e-6};
}

GradcheckOutcome gradcheck_pool(std::uint64_t seed, int trials) {
  Rng rng = substream(seed, "gc-pool");
  TensorD x({2, 3, 8, 8}), gy({2, 3, 4, 4});
  fill_uniform(x, rng, -1, 1);
  fill_uniform(gy, rng, -1, 1);
  Pool2Out<double> out = maxpool2_forward(x);
  const TensorD gx = maxpool2_backward(out.argmax, gy, x.shape());
  auto loss = [&]() { return weighted_sum(maxpool2_forward(x).y, gy); };
  GradCheckReport rep;
  grad_check_tensor(loss, x, gx, "pool.x", trials, 1e-6, rng, rep);
  return {rep, 1e-6};
}

GradcheckOutcome gradcheck_fc(std::uint64_t seed, int trials) {
  Rng rng = substream(seed, "gc-fc");
  TensorD x({4, 10}), w({7, 10}), b({7}), gy({4, 7});
  fill_uniform(x, rng, -1, 1);
  fill_uniform(w, rng, -1, 1);
  fill_uniform(b, rng, -1, 1);
  fill_uniform(gy, rng, -1, 1);
  FcGrads<double> grads = fc_backward(x, w, gy);
  auto loss = [&]() { return weighted_sum(fc_forward(x, w, b), gy); };
  TensorD gb = grads.gb;
  GradCheckReport rep;
  grad_check_tensor(loss, x, grads.gx, "fc.x", trials, 1e-6, rng, rep);
  grad_check_tensor(loss, w, grads.gw, "fc.w", trials, 1e-6, rng, rep);
  grad_check_tensor(loss, b, gb, "fc.b", trials, 1e-6, rng, rep);
  return {rep, 1e-6};
}

GradcheckOutcome gradcheck_prelu(std::uint64_t seed, int trials) {
  Rng rng = substream(seed, "gc-prelu");
  TensorD x({2, 4, 5, 5}), a({4}), gy({2, 4, 5, 5});
  fill_away_from_zero(x, rng);
  fill_uniform(a, rng, 0.05, 0.5);
  fill_uniform(gy, rng, -1, 1);
  PreluGrads<double> grads = prelu_backward(x, a, gy);
  auto loss = [&]() { return weighted_sum(prelu_forward(x, a), gy); };
  GradCheckReport rep;
  grad_check_tensor(loss, x, grads.gx, "prelu.x", trials, 1e-7, rng, rep);
  grad_check_tensor(loss, a, grads.gslopes, "prelu.slopes", trials, 1e-7, rng, rep);
  return {rep, 1e-6};
}

GradcheckOutcome gradcheck_residual(std::uint64_t seed, int trials) {
  Rng rng = substream(seed, "gc-residual");
  TensorD x({2, 3, 4, 4}), y({2, 3, 4, 4}), gy({2, 3, 4, 4});
  fill_uniform(x, rng, -1, 1);
  fill_uniform(y, rng, -1, 1);
  fill_uniform(gy, rng, -1, 1);
  // both addends receive the upstream gradient unchanged
  auto loss = [&]() { return weighted_sum(residual_add(x, y), gy); };
  GradCheckReport rep;
  TensorD gx = gy;
  grad_check_tensor(loss, x, gx, "residual.a", trials, 1e-6, rng, rep);
  grad_check_tensor(loss, y, gx, "residual.b", trials, 1e-6, rng, rep);
  return {rep, 1e-6};
}

GradcheckOutcome gradcheck_loss(std::uint64_t seed, int trials) {
  Rng rng = substream(seed, "gc-loss");
  TensorD pred({4, 9}), label({4, 9});
  fill_uniform(pred, rng, -1, 1);
  fill_uniform(label, rng, -1, 1);
  MseOut<double> out = mse_loss(pred, label);
  auto loss = [&]() { return mse_loss(pred, label).loss; };
  GradCheckReport rep;
  grad_check_tensor(loss, pred, out.grad, "mse.pred", trials, 1e-6, rng, rep);
  return {rep, 1e-6};
}

GradcheckOutcome gradcheck_e2e(std::uint64_t seed, int trials) {
  const StereoRig rig = default_rig();
  ModelConfig cfg;
  cfg.channel_multiplier = 0.25;
  cfg.use_mask_channel = false;
  cfg.input_size = 16;
  ModelF mf(cfg, seed);
  for (auto& e : mf.entries())
    if (e.name == "head.fc3.w" || e.name == "head.fc3.b")
      for (std::size_t i = 0; i < e.value->size(); ++i) (*e.value)[i] *= 0.01f;
  ModelD md(cfg, seed);
  {
    auto ef = mf.entries();
    auto ed = md.entries();
    for (std::size_t i = 0; i < ef.size(); ++i)
      for (std::size_t k = 0; k < ef[i].value->size(); ++k)
        (*ed[i].value)[k] = static_cast<double>((*ef[i].value)[k]);
  }

  Rng rng = substream(seed, "gc-e2e");
  const std::int64_t N = 2;
  TensorF l({N, 1, 16, 16}), r({N, 1, 16, 16}), gy({N, 18});
  fill_uniform(l, rng, 0, 1);
  fill_uniform(r, rng, 0, 1);
  fill_uniform(gy, rng, -0.01, 0.01);
  std::vector<CropMeta> metas(N);
  for (auto& m : metas) {
    m.offset_lx = 220;
    m.offset_rx = 180;
    m.offset_y = 120;
    m.scale = 2.5;
  }
  TensorD ld = l.cast<double>(), rd = r.cast<double>(), gyd = gy.cast<double>();

  mf.zero_grads();
  mf.forward_3d(rig, metas, l, r, DisparityGuard::strict);
  mf.backward_3d(gy);

  auto loss = [&]() {
    const TensorD out = md.forward_3d(rig, metas, ld, rd, DisparityGuard::strict);
    double s = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) s += gyd[i] * out[i];
    return s;
  };

  GradCheckReport rep;
  Rng pick = substream(seed, "gc-e2e-pick");
  auto ef = mf.entries();
  auto ed = md.entries();
  for (const std::string probe :
       {"shared.conv0.w", "shared.conv0x2.w", "left.conv2x1.w", "right.conv31.w",
        "head.fc1.w", "head.fc3.w"}) {
    for (std::size_t i = 0; i < ef.size(); ++i) {
      if (ef[i].name != probe) continue;
      TensorD analytic = ef[i].grad->template cast<double>();
      grad_check_tensor(loss, *ed[i].value, analytic, probe, trials, 1e-5, pick, rep);
    }
  }
  return {rep, 1e-4};
}

int cmd_gradcheck(const std::string& target, int trials, std::uint64_t seed) {
  pin_blas_single_thread();
  GradcheckOutcome out;
  if (target == "bdm") out = gradcheck_bdm(seed, trials);
  else if (target == "conv") out = gradcheck_conv(seed, trials);
  else if (target == "pool") out = gradcheck_pool(seed, trials);
  else if (target == "fc") out = gradcheck_fc(seed, trials);
  else if (target == "prelu") out = gradcheck_prelu(seed, trials);
  else if (target == "residual") out = gradcheck_residual(seed, trials);
  else if (target == "loss") out = gradcheck_loss(seed, trials);
  else if (target == "e2e") out = gradcheck_e2e(seed, trials);
  else
    throw std::invalid_argument(
        "--target must be one of bdm|conv|pool|fc|prelu|residual|loss|e2e");

  std::printf("%s worst relative error %.3e (tolerance %.0e)\n", target.c_str(),
              out.report.max_rel, out.tolerance);
  if (out.report.max_rel >= out.tolerance) {
    std::fprintf(stderr, "gradcheck FAILED: %s\n", out.report.describe().c_str());
    return kExitGradcheck;
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

struct AblateArgs {
  std::string data;
  std::string out;
  std::uint64_t seed = 1;
  std::int64_t batch = 32;
  std::int64_t iters = 400;
  double lr0 = 0.005;
  std::int64_t finetune_iters = 200;
  double finetune_lr = 1e-8;
};

int cmd_ablate(const AblateArgs& a) {
  const Dataset ds = load_dataset(a.data);
  std::filesystem::create_directories(a.out);

  TrainConfig pre;
  pre.seed = a.seed;
  pre.batch_size = a.batch;
  pre.max_iters = a.iters;
  pre.lr0 = a.lr0;
  TrainConfig fin = pre;
  fin.max_iters = a.finetune_iters;
  fin.lr0 = a.finetune_lr;

  RunManifest man;
  man.command = "ablate";
  man.seed = a.seed;
  man.inputs = {a.data};
  man.config = nlohmann::json{{"batch", a.batch},
                              {"iters", a.iters},
                              {"lr0", a.lr0},
                              {"finetune_iters", a.finetune_iters},
                              {"finetune_lr", a.finetune_lr}};
  man.started = iso_timestamp_now();

  const std::vector<AblationResult> rows = run_ablation(ds, pre, fin, a.out);
  write_ablation_csv(rows, a.out + "/ablation.csv");

  man.outputs = {a.out + "/ablation.csv"};
  for (const AblationResult& r : rows) {
    if (r.row_dir.empty()) continue;
    RunManifest rm;
    rm.command = "ablate " + r.spec.name;
    rm.seed = a.seed;
    rm.inputs = {a.data};
    rm.config = nlohmann::json{
        {"strategy", r.spec.name},
        {"channel_multiplier", r.spec.model.channel_multiplier},
        {"use_mask_channel", r.spec.model.use_mask_channel},
        {"use_residual", r.spec.model.use_residual},
        {"augment", r.spec.augment},
        {"finetune", r.spec.finetune},
        {"batch", a.batch},
        {"iters", a.iters},
        {"lr0", a.lr0},
        {"finetune_iters", a.finetune_iters},
        {"finetune_lr", a.finetune_lr}};
    rm.started = r.started;
    rm.finished = r.finished;
    if (!r.failed) {
      rm.outputs.push_back(r.row_dir + "/pretrain/final.ckpt");
      if (r.spec.finetune) rm.outputs.push_back(r.row_dir + "/finetune/final.ckpt");
    }
    std::filesystem::create_directories(r.row_dir);
    const std::string rm_path = r.row_dir + "/run_manifest.json";
    write_run_manifest(rm, rm_path);
    man.outputs.push_back(rm_path);
  }
  man.finished = iso_timestamp_now();
  write_run_manifest(man, a.out + "/run_manifest.json");

  bool any_failed = false;
  for (const AblationResult& r : rows) {
    if (r.failed) {
      any_failed = true;
      std::printf("%-22s FAILED: %s\n", r.spec.name.c_str(), r.error.c_str());
    } else {
      std::printf("%-22s %8.3f mm (paper reference %.1f mm, not reproducible)\n",
                  r.spec.name.c_str(), r.mean_mm, r.spec.paper_reference_mm);
    }
  }
  std::cout << "table: " << a.out << "/ablation.csv\n";
  return any_failed ? kExitNumerical : kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fingertip detection pipeline: synthetic stereo data, two-stream "
               "network, triangulation layer"};
  app.require_subcommand(1);

  GenDataArgs gen;
  CLI::App* gen_cmd = app.add_subcommand("gen-data", "generate a synthetic dataset");
  gen_cmd->add_option("--count", gen.count, "records to generate")->required();
  gen_cmd->add_option("--split", gen.split, "train or test");
  gen_cmd->add_option("--seed", gen.seed, "generator seed");
  gen_cmd->add_option("--out", gen.out, "dataset directory")->required();
  gen_cmd->add_option("--rig", gen.rig_path, "rig json to use instead of the default");
  gen_cmd->add_flag("--append", gen.append, "append to an existing manifest");
  gen_cmd->add_option("--threads", gen.threads, "worker threads for record generation")
      ->check(CLI::PositiveNumber);

  TrainArgs tr;
  std::vector<std::string> tr_set;
  CLI::App* tr_cmd = app.add_subcommand("train", "run one training phase");
  tr_cmd->add_option("--phase", tr.phase, "pretrain or finetune")->required();
  tr_cmd->add_option("--data", tr.data, "dataset directory")->required();
  tr_cmd->add_option("--init", tr.init, "checkpoint to start from");
  tr_cmd->add_option("--config", tr.config_file, "key-value config file");
  tr_cmd->add_option("--out", tr.out, "output directory")->required();
  tr_cmd->add_option("--set", tr_set,
                     "config override key=value (repeatable, wins over --config)");
  tr_cmd->add_option("--threads", tr.threads,
                     "ignored: training is single-threaded for determinism")
      ->check(CLI::PositiveNumber);

  EvalArgs ev;
  CLI::App* ev_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  ev_cmd->add_option("--ckpt", ev.ckpt, "checkpoint file");
  ev_cmd->add_option("--data", ev.data, "dataset directory")->required();
  ev_cmd->add_option("--out", ev.out, "output directory")->required();
  ev_cmd->add_option("--split", ev.split, "dataset split to evaluate");
  ev_cmd->add_flag("--inject-ground-truth", ev.inject_ground_truth,
                   "feed ground truth through the metrics path");
  ev_cmd->add_option("--threads", ev.threads, "worker threads for evaluation")
      ->check(CLI::PositiveNumber);

  std::string gc_target;
  int gc_trials = 24;
  std::uint64_t gc_seed = 1;
  CLI::App* gc_cmd = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  gc_cmd->add_option("--target", gc_target,
                     "bdm|conv|pool|fc|prelu|residual|loss|e2e")->required();
  gc_cmd->add_option("--trials", gc_trials, "coordinates probed per tensor");
  gc_cmd->add_option("--seed", gc_seed, "probe seed");

  AblateArgs ab;
  CLI::App* ab_cmd = app.add_subcommand("ablate", "run the incremental-strategy table");
  ab_cmd->add_option("--data", ab.data, "dataset directory")->required();
  ab_cmd->add_option("--out", ab.out, "output directory")->required();
  ab_cmd->add_option("--seed", ab.seed, "training seed");
  ab_cmd->add_option("--batch", ab.batch, "batch size for every row");
  ab_cmd->add_option("--iters", ab.iters, "pretrain iterations per row");
  ab_cmd->add_option("--lr0", ab.lr0, "pretrain learning rate");
  ab_cmd->add_option("--finetune-iters", ab.finetune_iters, "finetune iterations");
  ab_cmd->add_option("--finetune-lr", ab.finetune_lr, "finetune learning rate");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*gen_cmd) return cmd_gen_data(gen);
    if (*tr_cmd) {
      for (const std::string& s : tr_set) {
        const std::size_t eq = s.find('=');
        if (eq == std::string::npos || eq == 0)
          throw std::invalid_argument("--set expects key=value, got '" + s + "'");
        tr.overrides.emplace_back(s.substr(0, eq), s.substr(eq + 1));
      }
      return cmd_train(tr);
    }
    if (*ev_cmd) return cmd_eval(ev);
    if (*gc_cmd) return cmd_gradcheck(gc_target, gc_trials, gc_seed);
    if (*ab_cmd) return cmd_ablate(ab);
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return kExitNumerical;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return kExitUsage;
  } catch (const CheckpointError& e) {
    std::fprintf(stderr, "checkpoint error: %s\n", e.what());
    return kExitIo;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitIo;
  }
  return kExitUsage;
}
