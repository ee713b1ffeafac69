#pragma once

#include <cmath>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "facl/ops.hpp"
#include "facl/rng.hpp"

namespace facl {

enum class Act { relu, none };

struct MlpLayer {
  std::size_t in = 0, out = 0;
  bool bn = false;
  Act act = Act::none;
};

struct MlpSpec {
  std::vector<MlpLayer> layers;

  void validate() const {
    require(!layers.empty(), "MlpSpec: empty layer list");
    for (std::size_t i = 0; i + 1 < layers.size(); ++i)
      require(layers[i].out == layers[i + 1].in, "MlpSpec: adjacent widths differ");
    require(layers.back().act == Act::none, "MlpSpec: last layer must have no activation");
  }
};

/// weak: 2 linear layers, no BN anywhere; strong: 3 linear layers with BN
/// after every one, relu on all but the last.
inline MlpSpec build_projector(const std::string& kind, std::size_t in, std::size_t hidden,
                               std::size_t out, bool strong_final_bn = true) {
  require(in > 0 && hidden > 0 && out > 0, "build_projector: dims must be positive");
  MlpSpec s;
  if (kind == "weak") {
    s.layers = {{in, hidden, false, Act::relu}, {hidden, out, false, Act::none}};
  } else if (kind == "strong") {
    s.layers = {{in, hidden, true, Act::relu},
                {hidden, hidden, true, Act::relu},
                {hidden, out, strong_final_bn, Act::none}};
  } else {
    throw std::invalid_argument("build_projector: kind must be weak or strong");
  }
  s.validate();
  return s;
}

/// 2 layers, BN+relu after the first only.
inline MlpSpec build_predictor(std::size_t in, std::size_t hidden, std::size_t out) {
  require(in > 0 && hidden > 0 && out > 0, "build_predictor: dims must be positive");
  MlpSpec s;
  s.layers = {{in, hidden, true, Act::relu}, {hidden, out, false, Act::none}};
  s.validate();
  return s;
}

struct EncoderSpec {
  enum class Kind { mlp, smallconv };
  Kind kind = Kind::mlp;
  MlpSpec mlp;                                // mlp encoders
  std::vector<std::size_t> conv_channels;     // smallconv: channels per stage
  std::size_t image_hw = 32;                  // smallconv input height == width
  std::size_t out_dim = 0;

  void validate() const {
    if (kind == Kind::mlp) {
      mlp.validate();
      require(mlp.layers.back().out == out_dim, "EncoderSpec: mlp output width != out_dim");
    } else {
      require(conv_channels.size() == 3, "EncoderSpec: smallconv needs 3 stages");
      require(image_hw == 32 || image_hw == 64, "EncoderSpec: smallconv needs 32x32 or 64x64 input");
      require(out_dim > 0, "EncoderSpec: out_dim must be positive");
    }
  }
};

inline EncoderSpec mlp_encoder(std::size_t in, const std::vector<std::size_t>& hidden,
                               std::size_t out) {
  EncoderSpec e;
  e.kind = EncoderSpec::Kind::mlp;
  e.out_dim = out;
  std::size_t prev = in;
  for (std::size_t hdim : hidden) {
    e.mlp.layers.push_back({prev, hdim, false, Act::relu});
    prev = hdim;
  }
  e.mlp.layers.push_back({prev, out, false, Act::none});
  e.validate();
  return e;
}

inline EncoderSpec smallconv_encoder(std::vector<std::size_t> channels, std::size_t image_hw,
                                     std::size_t out) {
  EncoderSpec e;
  e.kind = EncoderSpec::Kind::smallconv;
  e.conv_channels = std::move(channels);
  e.image_hw = image_hw;
  e.out_dim = out;
  e.validate();
  return e;
}

/// Named parameter store. Ordering is the construction order, which fixes the
/// optimizer and serialization layouts.
struct ModelParams {
  std::vector<std::pair<std::string, Val>> params;
  std::map<std::string, std::shared_ptr<BnState>> bn;

  Val find(const std::string& name) const {
    for (const auto& [n, p] : params)
      if (n == name) return p;
    throw std::out_of_range("ModelParams: no parameter " + name);
  }

  BnState& bn_state(const std::string& name) const {
    auto it = bn.find(name);
    if (it == bn.end()) throw std::out_of_range("ModelParams: no BN state " + name);
    return *it->second;
  }

  void merge(const ModelParams& other) {
    for (const auto& p : other.params) params.push_back(p);
    for (const auto& s : other.bn) bn.emplace(s.first, s.second);
  }
};

/// Excluded from weight decay and LARS scaling.
inline bool is_bias_or_bn(const std::string& name) {
  auto ends_with = [&](const char* suf) {
    const std::string s(suf);
    return name.size() >= s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0;
  };
  return ends_with(".b") || ends_with(".gamma") || ends_with(".beta");
}

inline Tensor xavier_uniform(std::vector<std::size_t> shape, std::size_t fan_in,
                             std::size_t fan_out, Rng& rng) {
  Tensor t(std::move(shape));
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (double& v : t.data) v = rng.uniform(-a, a);
  t.quantize();
  return t;
}

inline ModelParams init_mlp(const std::string& prefix, const MlpSpec& spec, Rng& rng) {
  ModelParams mp;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const MlpLayer& l = spec.layers[i];
    const std::string base = prefix + ".L" + std::to_string(i);
    mp.params.emplace_back(base + ".w", parameter(xavier_uniform({l.in, l.out}, l.in, l.out, rng)));
    mp.params.emplace_back(base + ".b", parameter(Tensor({l.out}, 0.0)));
    if (l.bn) {
      mp.params.emplace_back(base + ".gamma", parameter(Tensor({l.out}, 1.0)));
      mp.params.emplace_back(base + ".beta", parameter(Tensor({l.out}, 0.0)));
      mp.bn.emplace(base, std::make_shared<BnState>(l.out));
    }
  }
  return mp;
}

inline ModelParams init_encoder(const std::string& prefix, const EncoderSpec& spec, Rng& rng) {
  spec.validate();
  if (spec.kind == EncoderSpec::Kind::mlp) return init_mlp(prefix, spec.mlp, rng);
  ModelParams mp;
  std::size_t cin = 3;
  for (std::size_t s = 0; s < 3; ++s) {
    const std::size_t cout = spec.conv_channels[s];
    const std::string base = prefix + ".C" + std::to_string(s);
    mp.params.emplace_back(base + ".w",
                           parameter(xavier_uniform({cout, cin, 3, 3}, cin * 9, cout * 9, rng)));
    cin = cout;
  }
  const std::size_t hw = spec.image_hw / 8;
  const std::size_t flat = cin * hw * hw;
  mp.params.emplace_back(prefix + ".F.w",
                         parameter(xavier_uniform({flat, spec.out_dim}, flat, spec.out_dim, rng)));
  mp.params.emplace_back(prefix + ".F.b", parameter(Tensor({spec.out_dim}, 0.0)));
  return mp;
}

inline Val forward_mlp(const std::string& prefix, const MlpSpec& spec, const ModelParams& mp, Val x,
                       bool train, bool update_stats = true) {
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const MlpLayer& l = spec.layers[i];
    const std::string base = prefix + ".L" + std::to_string(i);
    x = add_bias(matmul(x, mp.find(base + ".w")), mp.find(base + ".b"));
    if (l.bn)
      x = batch_norm(x, mp.find(base + ".gamma"), mp.find(base + ".beta"), mp.bn_state(base),
                     train, update_stats);
    if (l.act == Act::relu) x = relu(x);
  }
  return x;
}

inline Val forward_encoder(const std::string& prefix, const EncoderSpec& spec,
                           const ModelParams& mp, Val x, bool train, bool update_stats = true) {
  if (spec.kind == EncoderSpec::Kind::mlp)
    return forward_mlp(prefix, spec.mlp, mp, std::move(x), train, update_stats);
  for (std::size_t s = 0; s < 3; ++s) {
    x = avg_pool2(relu(conv2d(x, mp.find(prefix + ".C" + std::to_string(s) + ".w"))));
  }
  const std::size_t b = x->v.size(0);
  x = reshape(x, {b, x->v.numel() / b});
  return add_bias(matmul(x, mp.find(prefix + ".F.w")), mp.find(prefix + ".F.b"));
}

}  // namespace facl
