#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tsbnet/model.hpp"
#include "tsbnet/tensor.hpp"

namespace tsbnet {

// Checkpoint file = text header + concatenated raw little-endian float32
// blobs. Header grammar, one entry per line:
//   tsbnet-checkpoint v1
//   config <key> <value>
//   tensor <name> <role> <d0,d1,...> f32 <byte offset into data section>
//   end
// Momentum buffers are stored as extra tensors with role "momentum".

enum class CheckpointErrorCode { malformed_header, shape_mismatch, truncated };

class CheckpointError : public std::runtime_error {
 public:
  CheckpointError(CheckpointErrorCode code, const std::string& msg)
      : std::runtime_error(msg), code_(code) {}
  CheckpointErrorCode code() const { return code_; }

 private:
  CheckpointErrorCode code_;
};

namespace detail {

inline std::string shape_to_csv(const std::vector<std::int64_t>& shape) {
  std::string s;
  for (std::size_t i = 0; i < shape.size(); ++i)
    s += (i ? "," : "") + std::to_string(shape[i]);
  return s;
}

inline std::vector<std::int64_t> csv_to_shape(const std::string& s) {
  std::vector<std::int64_t> shape;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      shape.push_back(std::stoll(item));
    } catch (const std::exception&) {
      throw CheckpointError(CheckpointErrorCode::malformed_header,
                            "bad shape entry '" + item + "'");
    }
  }
  if (shape.empty())
    throw CheckpointError(CheckpointErrorCode::malformed_header, "empty shape list");
  return shape;
}

// float32 little-endian on all supported targets; memcpy through uint32 to
// stay byte-order explicit.
inline void append_f32_le(std::string& out, float v) {
  std::uint32_t u;
  std::memcpy(&u, &v, 4);
  out.push_back(static_cast<char>(u & 0xff));
  out.push_back(static_cast<char>((u >> 8) & 0xff));
  out.push_back(static_cast<char>((u >> 16) & 0xff));
  out.push_back(static_cast<char>((u >> 24) & 0xff));
}

inline float read_f32_le(const unsigned char* p) {
  const std::uint32_t u = static_cast<std::uint32_t>(p[0]) |
                          (static_cast<std::uint32_t>(p[1]) << 8) |
                          (static_cast<std::uint32_t>(p[2]) << 16) |
                          (static_cast<std::uint32_t>(p[3]) << 24);
  float v;
  std::memcpy(&v, &u, 4);
  return v;
}

}  // namespace detail

// `rig`, when given, records which camera pair the training data used so a
// later evaluation can detect a mismatched dataset.
inline void save_checkpoint(Model<float>& model, const std::string& path,
                            bool with_momentum = true,
                            const StereoRig* rig = nullptr) {
  const ModelConfig& cfg = model.config();
  std::ostringstream header;
  header << "tsbnet-checkpoint v1\n";
  header.precision(17);
  header << "config channel_multiplier " << cfg.channel_multiplier << "\n";
  header << "config use_mask_channel " << (cfg.use_mask_channel ? 1 : 0) << "\n";
  header << "config use_residual " << (cfg.use_residual ? 1 : 0) << "\n";
  header << "config attach_bdm " << (cfg.attach_bdm ? 1 : 0) << "\n";
  header << "config input_size " << cfg.input_size << "\n";
  if (rig) {
    header << "config rig_f " << rig->f << "\n";
    header << "config rig_b " << rig->b << "\n";
    header << "config rig_lambda " << rig->lambda << "\n";
    header << "config rig_w " << rig->w << "\n";
    header << "config rig_h " << rig->h << "\n";
  }

  std::string blob;
  auto emit = [&](const std::string& name, const std::string& role,
                  const Tensor<float>& t) {
    header << "tensor " << name << " " << role << " "
           << detail::shape_to_csv(t.shape()) << " f32 " << blob.size() << "\n";
    for (std::size_t i = 0; i < t.size(); ++i) detail::append_f32_le(blob, t[i]);
  };
  for (auto& e : model.entries()) emit(e.name, e.role, *e.value);
  if (with_momentum)
    for (auto& e : model.entries()) emit(e.name + ".v", "momentum", *e.velocity);
  header << "end\n";

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  f << header.str();
  f.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!f) throw std::runtime_error("short write to checkpoint: " + path);
}

struct CheckpointContents {
  ModelConfig config;
  bool has_rig = false;
  StereoRig rig;
  struct Entry {
    std::string name, role;
    std::vector<std::int64_t> shape;
    std::size_t offset;
  };
  std::vector<Entry> entries;
  std::string blob;

  std::vector<float> tensor_data(const Entry& e) const {
    const std::size_t count = Tensor<float>::numel_of(e.shape);
    if (e.offset + count * 4 > blob.size())
      throw CheckpointError(CheckpointErrorCode::truncated,
                            "data section ends before tensor '" + e.name + "'");
    std::vector<float> v(count);
    const unsigned char* p =
        reinterpret_cast<const unsigned char*>(blob.data()) + e.offset;
    for (std::size_t i = 0; i < count; ++i) v[i] = detail::read_f32_le(p + 4 * i);
    return v;
  }
};

inline CheckpointContents read_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint: " + path);

  CheckpointContents c;
  std::string line;
  if (!std::getline(f, line) || line != "tsbnet-checkpoint v1")
    throw CheckpointError(CheckpointErrorCode::malformed_header,
                          "missing checkpoint magic line");
  bool saw_end = false;
  std::int64_t last_offset = -1;
  while (std::getline(f, line)) {
    if (line == "end") {
      saw_end = true;
      break;
    }
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "config") {
      std::string key, value;
      ls >> key >> value;
      if (key.empty() || value.empty())
        throw CheckpointError(CheckpointErrorCode::malformed_header,
                              "bad config line: " + line);
      try {
        if (key == "channel_multiplier") c.config.channel_multiplier = std::stod(value);
        else if (key == "use_mask_channel") c.config.use_mask_channel = std::stoi(value) != 0;
        else if (key == "use_residual") c.config.use_residual = std::stoi(value) != 0;
        else if (key == "attach_bdm") c.config.attach_bdm = std::stoi(value) != 0;
        else if (key == "input_size") c.config.input_size = std::stoi(value);
        else if (key == "rig_f") { c.rig.f = std::stod(value); c.has_rig = true; }
        else if (key == "rig_b") { c.rig.b = std::stod(value); c.has_rig = true; }
        else if (key == "rig_lambda") { c.rig.lambda = std::stod(value); c.has_rig = true; }
        else if (key == "rig_w") { c.rig.w = std::stoi(value); c.has_rig = true; }
        else if (key == "rig_h") { c.rig.h = std::stoi(value); c.has_rig = true; }
        else
          throw CheckpointError(CheckpointErrorCode::malformed_header,
                                "unknown config key: " + key);
      } catch (const CheckpointError&) {
        throw;
      } catch (const std::exception&) {
        throw CheckpointError(CheckpointErrorCode::malformed_header,
                              "bad config value: " + line);
      }
    } else if (kind == "tensor") {
      CheckpointContents::Entry e;
      std::string shape_csv, dtype;
      long long off = -1;
      ls >> e.name >> e.role >> shape_csv >> dtype >> off;
      if (ls.fail() || e.name.empty())
        throw CheckpointError(CheckpointErrorCode::malformed_header,
                              "bad tensor line: " + line);
      if (dtype != "f32")
        throw CheckpointError(CheckpointErrorCode::malformed_header,
                              "unsupported dtype '" + dtype + "'");
      if (off <= last_offset)
        throw CheckpointError(CheckpointErrorCode::malformed_header,
                              "tensor offsets must be strictly increasing at '" +
                                  e.name + "'");
      last_offset = off;
      e.shape = detail::csv_to_shape(shape_csv);
      e.offset = static_cast<std::size_t>(off);
      c.entries.push_back(std::move(e));
    } else {
      throw CheckpointError(CheckpointErrorCode::malformed_header,
                            "unrecognized header line: " + line);
    }
  }
  if (!saw_end)
    throw CheckpointError(CheckpointErrorCode::malformed_header,
                          "header not terminated by 'end'");

  std::ostringstream rest;
  rest << f.rdbuf();
  c.blob = rest.str();
  return c;
}

// Overwrites the parameters (and momentum buffers, when present in the file)
// of an already-built model. Shapes must match exactly.
inline void load_checkpoint_into(Model<float>& model, const std::string& path) {
  const CheckpointContents c = read_checkpoint(path);
  auto entries = model.entries();

  for (const auto& fe : c.entries) {
    const bool is_momentum = fe.role == "momentum";
    std::string want = fe.name;
    if (is_momentum) {
      if (want.size() < 2 || want.substr(want.size() - 2) != ".v")
        throw CheckpointError(CheckpointErrorCode::malformed_header,
                              "momentum tensor must be named <param>.v: " + fe.name);
      want = want.substr(0, want.size() - 2);
    }
    Tensor<float>* dst = nullptr;
    for (auto& me : entries)
      if (me.name == want) {
        dst = is_momentum ? me.velocity : me.value;
        break;
      }
    if (!dst)
      throw CheckpointError(CheckpointErrorCode::shape_mismatch,
                            "checkpoint tensor '" + fe.name +
                                "' has no counterpart in the model");
    if (dst->shape() != fe.shape)
      throw CheckpointError(CheckpointErrorCode::shape_mismatch,
                            "tensor '" + fe.name + "' shape " +
                                detail::shape_to_csv(fe.shape) + " vs model " +
                                detail::shape_to_csv(dst->shape()));
    const std::vector<float> data = c.tensor_data(fe);
    for (std::size_t i = 0; i < data.size(); ++i) (*dst)[i] = data[i];
  }

  // Every model parameter must be covered by the file.
  for (auto& me : entries) {
    bool found = false;
    for (const auto& fe : c.entries)
      if (fe.name == me.name) {
        found = true;
        break;
      }
    if (!found)
      throw CheckpointError(CheckpointErrorCode::shape_mismatch,
                            "model parameter '" + me.name + "' missing from checkpoint");
  }
}

inline Model<float> load_checkpoint(const std::string& path, std::uint64_t seed = 0) {
  const CheckpointContents c = read_checkpoint(path);
  Model<float> model(c.config, seed);
  load_checkpoint_into(model, path);
  return model;
}

}  // namespace tsbnet
