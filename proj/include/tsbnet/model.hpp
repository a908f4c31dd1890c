#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "tsbnet/layers.hpp"
#include "tsbnet/optim.hpp"
#include "tsbnet/rng.hpp"
#include "tsbnet/stereo_geometry.hpp"
#include "tsbnet/tensor.hpp"

namespace tsbnet {

inline constexpr int kNumJoints = 6;
inline constexpr int kOutputDim = 3 * kNumJoints;  // (s,q,t) per joint
inline constexpr int kInputSize = 96;

// Joint order is fixed everywhere: tensors, label files, metrics.
inline const std::array<std::string, kNumJoints> kJointNames = {
    "thumb", "index", "middle", "ring", "pinky", "palm_root"};

struct ModelConfig {
  double channel_multiplier = 1.0;
  bool use_mask_channel = true;
  bool use_residual = true;
  bool attach_bdm = true;
  int input_size = kInputSize;

  int input_channels() const { return use_mask_channel ? 2 : 1; }
};

// Base channel widths per stage, before the multiplier.
inline constexpr int kBaseChannels[6] = {32, 32, 48, 64, 128, 192};
inline constexpr int kFc1 = 512;
inline constexpr int kFc2 = 256;

inline int scaled_channels(int base, double mult) {
  const double c = base * mult;
  const double r = std::round(c);
  if (!(r >= 1.0) || std::fabs(c - r) > 1e-9)
    throw std::invalid_argument("channel_multiplier yields non-integer channels: " +
                                std::to_string(base) + " x " + std::to_string(mult));
  return static_cast<int>(r);
}

// Crop transform from crop-normalized network outputs back to full-frame
// pixels. One instance per stereo sample; both views share the scale and the
// vertical offset (rectified), horizontal offsets differ per view.
struct CropMeta {
  double offset_lx = 0.0;
  double offset_rx = 0.0;
  double offset_y = 0.0;
  double scale = 1.0;
};

inline PixelTriplet denormalize_triplet(const PixelTriplet& norm, const CropMeta& m) {
  if (!(m.scale > 0)) throw std::invalid_argument("CropMeta.scale must be > 0");
  const double k = m.scale * kInputSize;
  return PixelTriplet{(m.offset_lx + m.offset_rx) / 2.0 + k * norm.s,
                      (m.offset_lx - m.offset_rx) + k * norm.q,
                      m.offset_y + k * norm.t};
}

inline PixelTriplet normalize_triplet(const PixelTriplet& full, const CropMeta& m) {
  if (!(m.scale > 0)) throw std::invalid_argument("CropMeta.scale must be > 0");
  const double k = m.scale * kInputSize;
  return PixelTriplet{(full.s - (m.offset_lx + m.offset_rx) / 2.0) / k,
                      (full.q - (m.offset_lx - m.offset_rx)) / k,
                      (full.t - m.offset_y) / k};
}

// Closed-form parameter count (weights + biases + PReLU slopes).
inline std::int64_t param_count(const ModelConfig& cfg) {
  const double m = cfg.channel_multiplier;
  const int c0 = scaled_channels(kBaseChannels[0], m);
  const int c0x = scaled_channels(kBaseChannels[1], m);
  const int c1x = scaled_channels(kBaseChannels[2], m);
  const int c2x = scaled_channels(kBaseChannels[3], m);
  const int c31 = scaled_channels(kBaseChannels[4], m);
  const int c32 = scaled_channels(kBaseChannels[5], m);
  const int cin = cfg.input_channels();

  auto conv = [](std::int64_t k, std::int64_t c, std::int64_t ksz) {
    return k * c * ksz * ksz + k + k;  // weights + biases + slopes
  };
  std::int64_t total = 0;
  // shared stages
  total += conv(c0, cin, 5);
  total += conv(c0x, c0, 3) + 3 * conv(c0x, c0x, 3);
  total += conv(c1x, c0x, 3) + conv(c1x, c1x, 3);
  // two separate streams
  total += 2 * (conv(c2x, c1x, 3) + 2 * conv(c2x, c2x, 3));
  total += 2 * conv(c31, c2x, 3);
  total += 2 * conv(c32, c31, 3);
  // fusion head
  const std::int64_t spatial = (cfg.input_size / 8) * (cfg.input_size / 8);
  const std::int64_t fused = 2 * static_cast<std::int64_t>(c32) * spatial;
  total += static_cast<std::int64_t>(kFc1) * fused + kFc1 + kFc1;
  total += static_cast<std::int64_t>(kFc2) * kFc1 + kFc2 + kFc2;
  total += static_cast<std::int64_t>(kOutputDim) * kFc2 + kOutputDim;  // fc3: no PReLU
  return total;
}

namespace detail {

template <class T>
struct ConvUnit {
  Tensor<T> w, b, a;      // kernel, bias, prelu slopes
  Tensor<T> gw, gb, ga;   // gradient accumulators
  Tensor<T> vw, vb, va;   // momentum buffers

  void init(std::int64_t out_c, std::int64_t in_c, std::int64_t k, Rng& rng) {
    w = Tensor<T>({out_c, in_c, k, k});
    init_fan_in_uniform(w, in_c * k * k, rng);
    b = Tensor<T>({out_c});
    a = Tensor<T>({out_c});
    a.fill(static_cast<T>(0.25));
    gw = Tensor<T>::zeros_like(w);
    gb = Tensor<T>::zeros_like(b);
    ga = Tensor<T>::zeros_like(a);
    vw = Tensor<T>::zeros_like(w);
    vb = Tensor<T>::zeros_like(b);
    va = Tensor<T>::zeros_like(a);
  }
};

template <class T>
struct FcUnit {
  Tensor<T> w, b, a;  // a is empty when the layer has no activation
  Tensor<T> gw, gb, ga;
  Tensor<T> vw, vb, va;

  void init(std::int64_t out_d, std::int64_t in_d, bool with_act, Rng& rng) {
    w = Tensor<T>({out_d, in_d});
    init_fan_in_uniform(w, in_d, rng);
    b = Tensor<T>({out_d});
    if (with_act) {
      a = Tensor<T>({out_d});
      a.fill(static_cast<T>(0.25));
      ga = Tensor<T>::zeros_like(a);
      va = Tensor<T>::zeros_like(a);
    }
    gw = Tensor<T>::zeros_like(w);
    gb = Tensor<T>::zeros_like(b);
    vw = Tensor<T>::zeros_like(w);
    vb = Tensor<T>::zeros_like(b);
  }
};

// Cached values one conv+PReLU application needs for its backward pass.
template <class T>
struct ConvTrace {
  Tensor<T> x;  // layer input
  Tensor<T> z;  // pre-activation
};

template <class T>
struct StreamTrace {
  ConvTrace<T> t0;
  Tensor<std::int64_t> am0;
  std::vector<std::int64_t> pre0_shape;
  std::array<ConvTrace<T>, 4> t0x;
  Tensor<std::int64_t> am1;
  std::vector<std::int64_t> pre1_shape;
  std::array<ConvTrace<T>, 2> t1x;
  std::array<ConvTrace<T>, 3> t2x;
  Tensor<std::int64_t> am2;
  std::vector<std::int64_t> pre2_shape;
  ConvTrace<T> t31, t32;
};

}  // namespace detail

template <class T>
struct ParamEntry {
  std::string name;
  std::string role;  // weight | bias | prelu
  Tensor<T>* value;
  Tensor<T>* grad;
  Tensor<T>* velocity;
};

// Two-stream network with shared low-level stages: both views pass through
// one physical copy of conv0/conv0x/conv1x (gradients sum), then through
// per-view conv2x/conv31/conv32, and the flattened features fuse in the fc
// head which regresses the 18-vector of crop-normalized (s,q,t) triplets.
template <class T>
class Model {
 public:
  Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    if (cfg_.input_size % 8 != 0 || cfg_.input_size < 8)
      throw std::invalid_argument("input_size must be a positive multiple of 8");
    const double m = cfg_.channel_multiplier;
    c0_ = scaled_channels(kBaseChannels[0], m);
    c0x_ = scaled_channels(kBaseChannels[1], m);
    c1x_ = scaled_channels(kBaseChannels[2], m);
    c2x_ = scaled_channels(kBaseChannels[3], m);
    c31_ = scaled_channels(kBaseChannels[4], m);
    c32_ = scaled_channels(kBaseChannels[5], m);

    Rng rng = substream(seed, "model-init");
    conv0_.init(c0_, cfg_.input_channels(), 5, rng);
    for (int i = 0; i < 4; ++i) conv0x_[i].init(c0x_, i == 0 ? c0_ : c0x_, 3, rng);
    for (int i = 0; i < 2; ++i) conv1x_[i].init(c1x_, i == 0 ? c0x_ : c1x_, 3, rng);
    for (int s = 0; s < 2; ++s) {
      for (int i = 0; i < 3; ++i)
        conv2x_[s][i].init(c2x_, i == 0 ? c1x_ : c2x_, 3, rng);
      conv31_[s].init(c31_, c2x_, 3, rng);
      conv32_[s].init(c32_, c31_, 3, rng);
    }
    const std::int64_t spatial = (cfg_.input_size / 8) * (cfg_.input_size / 8);
    fused_dim_ = 2 * static_cast<std::int64_t>(c32_) * spatial;
    fc1_.init(kFc1, fused_dim_, true, rng);
    fc2_.init(kFc2, kFc1, true, rng);
    fc3_.init(kOutputDim, kFc2, false, rng);
  }

  const ModelConfig& config() const { return cfg_; }
  std::int64_t fused_dim() const { return fused_dim_; }

  // --- forward / backward in crop-normalized pixel space ------------------

  Tensor<T> forward_pixels(const Tensor<T>& left, const Tensor<T>& right) {
    check_input(left);
    check_input(right);
    if (left.dim(0) != right.dim(0))
      throw std::invalid_argument("left/right batch sizes differ");
    const std::int64_t N = left.dim(0);

    const Tensor<T> lf = stream_forward(left, 0);
    const Tensor<T> rf = stream_forward(right, 1);

    // fuse: [left_features | right_features]
    const std::int64_t F = fused_dim_ / 2;
    fused_ = Tensor<T>({N, fused_dim_});
    for (std::int64_t n = 0; n < N; ++n) {
      std::copy(lf.data() + n * F, lf.data() + (n + 1) * F, fused_.data() + n * fused_dim_);
      std::copy(rf.data() + n * F, rf.data() + (n + 1) * F,
                fused_.data() + n * fused_dim_ + F);
    }

    z1_ = fc_forward(fused_, fc1_.w, fc1_.b);
    h1_ = prelu_forward(z1_, fc1_.a);
    z2_ = fc_forward(h1_, fc2_.w, fc2_.b);
    h2_ = prelu_forward(z2_, fc2_.a);
    return fc_forward(h2_, fc3_.w, fc3_.b);
  }

  // Accumulates parameter gradients for the cached batch.
  void backward_pixels(const Tensor<T>& grad_out) {
    if (grad_out.rank() != 2 || grad_out.dim(1) != kOutputDim ||
        grad_out.dim(0) != fused_.dim(0))
      throw std::invalid_argument("backward_pixels: gradient must be [N,18]");
    const std::int64_t N = grad_out.dim(0);

    FcGrads<T> g3 = fc_backward(h2_, fc3_.w, grad_out);
    add_into(fc3_.gw, g3.gw);
    add_into(fc3_.gb, g3.gb);

    PreluGrads<T> p2 = prelu_backward(z2_, fc2_.a, g3.gx);
    add_into(fc2_.ga, p2.gslopes);
    FcGrads<T> g2 = fc_backward(h1_, fc2_.w, p2.gx);
    add_into(fc2_.gw, g2.gw);
    add_into(fc2_.gb, g2.gb);

    PreluGrads<T> p1 = prelu_backward(z1_, fc1_.a, g2.gx);
    add_into(fc1_.ga, p1.gslopes);
    FcGrads<T> g1 = fc_backward(fused_, fc1_.w, p1.gx);
    add_into(fc1_.gw, g1.gw);
    add_into(fc1_.gb, g1.gb);

    const std::int64_t F = fused_dim_ / 2;
    const std::int64_t S = cfg_.input_size / 8;
    Tensor<T> gl({N, c32_, S, S}), gr({N, c32_, S, S});
    for (std::int64_t n = 0; n < N; ++n) {
      std::copy(g1.gx.data() + n * fused_dim_, g1.gx.data() + n * fused_dim_ + F,
                gl.data() + n * F);
      std::copy(g1.gx.data() + n * fused_dim_ + F, g1.gx.data() + (n + 1) * fused_dim_,
                gr.data() + n * F);
    }
    stream_backward(gl, 0);
    stream_backward(gr, 1);
  }

  // --- metric-space forward / backward through the triangulation stage ----

  // Output rows are (x,y,z) per joint in millimetres. Requires one CropMeta
  // per batch item.
  Tensor<T> forward_3d(const StereoRig& rig, const std::vector<CropMeta>& metas,
                       const Tensor<T>& left, const Tensor<T>& right,
                       DisparityGuard guard = DisparityGuard::clamp) {
    if (!cfg_.attach_bdm)
      throw std::invalid_argument("forward_3d requires attach_bdm = true");
    if (metas.size() != static_cast<std::size_t>(left.dim(0)))
      throw std::invalid_argument("forward_3d: one CropMeta per batch item required");
    const Tensor<T> norm = forward_pixels(left, right);
    return triangulate(rig, metas, norm, guard);
  }

  // The triangulation stage alone (network bypassed): used both by
  // forward_3d and by ground-truth injection in evaluation.
  Tensor<T> triangulate(const StereoRig& rig, const std::vector<CropMeta>& metas,
                        const Tensor<T>& norm_triplets, DisparityGuard guard) {
    const std::int64_t N = norm_triplets.dim(0);
    bdm_rig_ = rig;
    bdm_guard_ = guard;
    bdm_metas_ = metas;
    bdm_trips_.assign(static_cast<std::size_t>(N) * kNumJoints, PixelTriplet{});
    Tensor<T> out({N, kOutputDim});
    for (std::int64_t n = 0; n < N; ++n) {
      for (int j = 0; j < kNumJoints; ++j) {
        const std::size_t k = static_cast<std::size_t>(n * kOutputDim + 3 * j);
        const PixelTriplet norm{static_cast<double>(norm_triplets[k]),
                                static_cast<double>(norm_triplets[k + 1]),
                                static_cast<double>(norm_triplets[k + 2])};
        const PixelTriplet full =
            denormalize_triplet(norm, metas[static_cast<std::size_t>(n)]);
        bdm_trips_[static_cast<std::size_t>(n) * kNumJoints + j] = full;
        const Point3D p = bdm_forward(rig, full, guard);
        out[k] = static_cast<T>(p.x);
        out[k + 1] = static_cast<T>(p.y);
        out[k + 2] = static_cast<T>(p.z);
      }
    }
    return out;
  }

  // Maps dL/d(x,y,z) back to dL/d(s̃,q̃,t̃) via the triangulation adjoint and
  // the crop Jacobian, then runs the pixel-space backward.
  void backward_3d(const Tensor<T>& grad_xyz) {
    const Tensor<T> g18 = triangulate_backward(grad_xyz);
    backward_pixels(g18);
  }

  Tensor<T> triangulate_backward(const Tensor<T>& grad_xyz) const {
    const std::int64_t N = grad_xyz.dim(0);
    if (grad_xyz.rank() != 2 || grad_xyz.dim(1) != kOutputDim ||
        static_cast<std::size_t>(N) * kNumJoints != bdm_trips_.size())
      throw std::invalid_argument("backward_3d: gradient shape mismatch with cached batch");
    Tensor<T> g18({N, kOutputDim});
    for (std::int64_t n = 0; n < N; ++n) {
      const double k = bdm_metas_[static_cast<std::size_t>(n)].scale * kInputSize;
      for (int j = 0; j < kNumJoints; ++j) {
        const std::size_t i = static_cast<std::size_t>(n * kOutputDim + 3 * j);
        const PointGrad go{static_cast<double>(grad_xyz[i]),
                           static_cast<double>(grad_xyz[i + 1]),
                           static_cast<double>(grad_xyz[i + 2])};
        const TripletGrad g = bdm_backward(
            bdm_rig_, bdm_trips_[static_cast<std::size_t>(n) * kNumJoints + j], go,
            bdm_guard_);
        g18[i] = static_cast<T>(g.s * k);
        g18[i + 1] = static_cast<T>(g.q * k);
        g18[i + 2] = static_cast<T>(g.t * k);
      }
    }
    return g18;
  }

  // --- optimization --------------------------------------------------------

  void zero_grads() {
    for (auto& e : entries()) e.grad->fill(T{});
  }

  void scale_grads(T factor) {
    for (auto& e : entries())
      for (std::size_t i = 0; i < e.grad->size(); ++i) (*e.grad)[i] *= factor;
  }

  void sgd_update(const TrainConfig& c, std::int64_t iter) {
    for (auto& e : entries()) sgd_step(*e.value, *e.grad, *e.velocity, c, iter);
  }

  double grad_norm() {
    double s = 0.0;
    for (auto& e : entries())
      for (std::size_t i = 0; i < e.grad->size(); ++i) {
        const double v = static_cast<double>((*e.grad)[i]);
        s += v * v;
      }
    return std::sqrt(s);
  }

  std::int64_t param_count() const {
    std::int64_t n = 0;
    for (const auto& e : const_cast<Model*>(this)->entries()) n += e.value->size();
    return n;
  }

  // Fixed registry order; the checkpoint format and the optimizer both
  // iterate this.
  std::vector<ParamEntry<T>> entries() {
    std::vector<ParamEntry<T>> out;
    auto conv = [&](const std::string& name, detail::ConvUnit<T>& u) {
      out.push_back({name + ".w", "weight", &u.w, &u.gw, &u.vw});
      out.push_back({name + ".b", "bias", &u.b, &u.gb, &u.vb});
      out.push_back({name + ".a", "prelu", &u.a, &u.ga, &u.va});
    };
    conv("shared.conv0", conv0_);
    for (int i = 0; i < 4; ++i) conv("shared.conv0x" + std::to_string(i + 1), conv0x_[i]);
    for (int i = 0; i < 2; ++i) conv("shared.conv1x" + std::to_string(i + 1), conv1x_[i]);
    for (int s = 0; s < 2; ++s) {
      const std::string side = s == 0 ? "left" : "right";
      for (int i = 0; i < 3; ++i)
        conv(side + ".conv2x" + std::to_string(i + 1), conv2x_[s][i]);
      conv(side + ".conv31", conv31_[s]);
      conv(side + ".conv32", conv32_[s]);
    }
    auto fc = [&](const std::string& name, detail::FcUnit<T>& u) {
      out.push_back({name + ".w", "weight", &u.w, &u.gw, &u.vw});
      out.push_back({name + ".b", "bias", &u.b, &u.gb, &u.vb});
      if (!u.a.empty()) out.push_back({name + ".a", "prelu", &u.a, &u.ga, &u.va});
    };
    fc("head.fc1", fc1_);
    fc("head.fc2", fc2_);
    fc("head.fc3", fc3_);
    return out;
  }

  // Architecture description used by conformance tests and the checkpoint
  // header: one entry per conv/fc layer in forward order.
  struct LayerSpec {
    std::string name;
    std::string kind;  // conv | fc
    std::int64_t out_ch, in_ch, kernel;
  };
  std::vector<LayerSpec> architecture() const {
    std::vector<LayerSpec> v;
    v.push_back({"shared.conv0", "conv", c0_, static_cast<std::int64_t>(cfg_.input_channels()), 5});
    for (int i = 0; i < 4; ++i)
      v.push_back({"shared.conv0x" + std::to_string(i + 1), "conv", c0x_,
                   i == 0 ? c0_ : c0x_, 3});
    for (int i = 0; i < 2; ++i)
      v.push_back({"shared.conv1x" + std::to_string(i + 1), "conv", c1x_,
                   i == 0 ? c0x_ : c1x_, 3});
    for (int s = 0; s < 2; ++s) {
      const std::string side = s == 0 ? "left" : "right";
      for (int i = 0; i < 3; ++i)
        v.push_back({side + ".conv2x" + std::to_string(i + 1), "conv", c2x_,
                     i == 0 ? c1x_ : c2x_, 3});
      v.push_back({side + ".conv31", "conv", c31_, c2x_, 3});
      v.push_back({side + ".conv32", "conv", c32_, c31_, 3});
    }
    v.push_back({"head.fc1", "fc", kFc1, fused_dim_, 0});
    v.push_back({"head.fc2", "fc", kFc2, kFc1, 0});
    v.push_back({"head.fc3", "fc", kOutputDim, kFc2, 0});
    return v;
  }

 private:
  void check_input(const Tensor<T>& x) const {
    if (x.rank() != 4 || x.dim(1) != cfg_.input_channels() ||
        x.dim(2) != cfg_.input_size || x.dim(3) != cfg_.input_size)
      throw std::invalid_argument("model input must be [N," +
                                  std::to_string(cfg_.input_channels()) + "," +
                                  std::to_string(cfg_.input_size) + "," +
                                  std::to_string(cfg_.input_size) + "], got " +
                                  x.shape_str());
  }

  static void add_into(Tensor<T>& dst, const Tensor<T>& src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }

  Tensor<T> conv_apply(detail::ConvUnit<T>& u, const Tensor<T>& x,
                       detail::ConvTrace<T>& trace) {
    trace.x = x;
    trace.z = conv2d_forward(x, u.w, u.b);
    return prelu_forward(trace.z, u.a);
  }

  // Backward through one conv+PReLU; returns gradient w.r.t. the layer input.
  Tensor<T> conv_unapply(detail::ConvUnit<T>& u, const detail::ConvTrace<T>& trace,
                         const Tensor<T>& gy, bool need_gx = true) {
    PreluGrads<T> pg = prelu_backward(trace.z, u.a, gy);
    add_into(u.ga, pg.gslopes);
    Conv2dGrads<T> cg = conv2d_backward(trace.x, u.w, pg.gx, need_gx);
    add_into(u.gw, cg.gw);
    add_into(u.gb, cg.gb);
    return std::move(cg.gx);
  }

  Tensor<T> stream_forward(const Tensor<T>& in, int side) {
    detail::StreamTrace<T>& tr = traces_[side];

    Tensor<T> h = conv_apply(conv0_, in, tr.t0);
    tr.pre0_shape = h.shape();
    Pool2Out<T> p0 = maxpool2_forward(h);
    tr.am0 = std::move(p0.argmax);
    h = std::move(p0.y);

    // conv0x block, optionally with two identity skips (around layers 1-2
    // and 3-4, joined after the second PReLU of each pair).
    Tensor<T> entry = h;
    h = conv_apply(conv0x_[0], h, tr.t0x[0]);
    h = conv_apply(conv0x_[1], h, tr.t0x[1]);
    if (cfg_.use_residual) h = residual_add(h, entry);
    Tensor<T> mid = h;
    h = conv_apply(conv0x_[2], h, tr.t0x[2]);
    h = conv_apply(conv0x_[3], h, tr.t0x[3]);
    if (cfg_.use_residual) h = residual_add(h, mid);

    tr.pre1_shape = h.shape();
    Pool2Out<T> p1 = maxpool2_forward(h);
    tr.am1 = std::move(p1.argmax);
    h = std::move(p1.y);

    h = conv_apply(conv1x_[0], h, tr.t1x[0]);
    h = conv_apply(conv1x_[1], h, tr.t1x[1]);

    h = conv_apply(conv2x_[side][0], h, tr.t2x[0]);
    h = conv_apply(conv2x_[side][1], h, tr.t2x[1]);
    h = conv_apply(conv2x_[side][2], h, tr.t2x[2]);

    tr.pre2_shape = h.shape();
    Pool2Out<T> p2 = maxpool2_forward(h);
    tr.am2 = std::move(p2.argmax);
    h = std::move(p2.y);

    h = conv_apply(conv31_[side], h, tr.t31);
    h = conv_apply(conv32_[side], h, tr.t32);
    return h;
  }

  void stream_backward(const Tensor<T>& gout, int side) {
    detail::StreamTrace<T>& tr = traces_[side];

    Tensor<T> g = conv_unapply(conv32_[side], tr.t32, gout);
    g = conv_unapply(conv31_[side], tr.t31, g);
    g = maxpool2_backward(tr.am2, g, tr.pre2_shape);

    g = conv_unapply(conv2x_[side][2], tr.t2x[2], g);
    g = conv_unapply(conv2x_[side][1], tr.t2x[1], g);
    g = conv_unapply(conv2x_[side][0], tr.t2x[0], g);

    g = conv_unapply(conv1x_[1], tr.t1x[1], g);
    g = conv_unapply(conv1x_[0], tr.t1x[0], g);
    g = maxpool2_backward(tr.am1, g, tr.pre1_shape);

    if (cfg_.use_residual) {
      // g arrives at the second join; skip branch goes to the first join.
      Tensor<T> skip2 = g;
      Tensor<T> gm = conv_unapply(conv0x_[3], tr.t0x[3], g);
      gm = conv_unapply(conv0x_[2], tr.t0x[2], gm);
      Tensor<T> at_mid = residual_add(gm, skip2);
      Tensor<T> ge = conv_unapply(conv0x_[1], tr.t0x[1], at_mid);
      ge = conv_unapply(conv0x_[0], tr.t0x[0], ge);
      g = residual_add(ge, at_mid);
    } else {
      g = conv_unapply(conv0x_[3], tr.t0x[3], g);
      g = conv_unapply(conv0x_[2], tr.t0x[2], g);
      g = conv_unapply(conv0x_[1], tr.t0x[1], g);
      g = conv_unapply(conv0x_[0], tr.t0x[0], g);
    }

    g = maxpool2_backward(tr.am0, g, tr.pre0_shape);
    conv_unapply(conv0_, tr.t0, g, /*need_gx=*/false);
  }

  ModelConfig cfg_;
  std::int64_t c0_ = 0, c0x_ = 0, c1x_ = 0, c2x_ = 0, c31_ = 0, c32_ = 0;
  std::int64_t fused_dim_ = 0;

  detail::ConvUnit<T> conv0_;
  std::array<detail::ConvUnit<T>, 4> conv0x_;
  std::array<detail::ConvUnit<T>, 2> conv1x_;
  std::array<std::array<detail::ConvUnit<T>, 3>, 2> conv2x_;
  std::array<detail::ConvUnit<T>, 2> conv31_;
  std::array<detail::ConvUnit<T>, 2> conv32_;
  detail::FcUnit<T> fc1_, fc2_, fc3_;

  std::array<detail::StreamTrace<T>, 2> traces_;
  Tensor<T> fused_, z1_, h1_, z2_, h2_;

  StereoRig bdm_rig_;
  DisparityGuard bdm_guard_ = DisparityGuard::clamp;
  std::vector<CropMeta> bdm_metas_;
  std::vector<PixelTriplet> bdm_trips_;
};

using ModelF = Model<float>;
using ModelD = Model<double>;

}  // namespace tsbnet
