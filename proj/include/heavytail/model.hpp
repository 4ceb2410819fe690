#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "heavytail/autodiff.hpp"
#include "heavytail/dataset.hpp"
#include "heavytail/errors.hpp"
#include "heavytail/rng.hpp"
#include "heavytail/tensor.hpp"

namespace heavytail {

// Two-layer MLP feature extractor: relu(W1 x + b1) -> W2 h + b2.
// Weight rows are output units, so W1 is [hidden x input].
struct MlpExtractor {
  Tensor w1, b1, w2, b2;
};

struct LinearHead {
  Tensor weight;  // [C x d]
  Tensor bias;    // [C]
};

// Bias-free head scoring tau * <normalized row, normalized feature>.
// tau is a learnable scalar starting at 1; an optional floor guards runs
// that drive it negative.
struct CosineHead {
  Tensor weight;  // [C x d]
  Tensor tau;     // scalar
  bool clamp = false;
  double clamp_min = 1e-3;
};

enum class HeadKind { Linear, Cosine };

inline std::string head_kind_name(HeadKind k) {
  return k == HeadKind::Linear ? "linear" : "cosine";
}

namespace detail {
constexpr std::uint64_t kInitStream = 0x696e6974ull;  // "init"

inline Tensor uniform_init(Shape shape, double bound, Rng& rng) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (auto& v : t.data) v = rng.uniform(-bound, bound);
  t.requires_grad = true;
  return t;
}
}  // namespace detail

class Model {
 public:
  // Parameters are drawn in a fixed order from the seed alone, so two
  // models built with the same seed share initial weights regardless of
  // head kind (the linear bias draw happens for both and the cosine head
  // simply never reads it).
  Model(std::size_t input_dim, std::size_t hidden_dim, std::size_t embed_dim,
        std::size_t num_classes, HeadKind kind, std::uint64_t seed,
        bool clamp_tau = false)
      : input_dim_(input_dim),
        hidden_dim_(hidden_dim),
        embed_dim_(embed_dim),
        num_classes_(num_classes),
        kind_(kind) {
    if (input_dim == 0 || hidden_dim == 0 || embed_dim == 0 ||
        num_classes == 0) {
      throw ParameterError("model: all dimensions must be positive");
    }
    Rng rng(derive_seed(seed, {detail::kInitStream}));
    const double bound1 = 1.0 / std::sqrt(static_cast<double>(input_dim));
    const double bound2 = 1.0 / std::sqrt(static_cast<double>(hidden_dim));
    const double bound3 = 1.0 / std::sqrt(static_cast<double>(embed_dim));
    extractor_.w1 = detail::uniform_init({hidden_dim, input_dim}, bound1, rng);
    extractor_.b1 = detail::uniform_init({hidden_dim}, bound1, rng);
    extractor_.w2 = detail::uniform_init({embed_dim, hidden_dim}, bound2, rng);
    extractor_.b2 = detail::uniform_init({embed_dim}, bound2, rng);
    Tensor head_w = detail::uniform_init({num_classes, embed_dim}, bound3, rng);
    Tensor head_b = detail::uniform_init({num_classes}, bound3, rng);
    linear_.weight = head_w;
    linear_.bias = std::move(head_b);
    cosine_.weight = std::move(head_w);
    cosine_.tau = Tensor::scalar(1.0);
    cosine_.tau.requires_grad = true;
    cosine_.clamp = clamp_tau;
  }

  std::size_t input_dim() const { return input_dim_; }
  std::size_t hidden_dim() const { return hidden_dim_; }
  std::size_t embed_dim() const { return embed_dim_; }
  std::size_t num_classes() const { return num_classes_; }
  HeadKind head_kind() const { return kind_; }

  MlpExtractor& extractor() { return extractor_; }
  const MlpExtractor& extractor() const { return extractor_; }
  LinearHead& linear_head() { return linear_; }
  const LinearHead& linear_head() const { return linear_; }
  CosineHead& cosine_head() { return cosine_; }
  const CosineHead& cosine_head() const { return cosine_; }

  double tau() const { return cosine_.tau.value(); }

  // Active trainable parameters (the inactive head stays untouched).
  std::vector<Tensor*> params() {
    std::vector<Tensor*> out{&extractor_.w1, &extractor_.b1, &extractor_.w2,
                             &extractor_.b2};
    if (kind_ == HeadKind::Linear) {
      out.push_back(&linear_.weight);
      out.push_back(&linear_.bias);
    } else {
      out.push_back(&cosine_.weight);
      out.push_back(&cosine_.tau);
    }
    return out;
  }

  // Applies the configured floor on tau after an optimizer step.
  void clamp_tau_if_enabled() {
    if (kind_ == HeadKind::Cosine && cosine_.clamp &&
        cosine_.tau.data[0] < cosine_.clamp_min) {
      cosine_.tau.data[0] = cosine_.clamp_min;
    }
  }

  struct Bound {
    Tape::Id w1, b1, w2, b2;
    Tape::Id head_w;
    Tape::Id head_b = 0;  // linear only
    Tape::Id tau = 0;     // cosine only
  };

  // Insert parameter leaves. Trainable binds flow gradients back into the
  // model's tensors; frozen binds are plain constants (evaluation path).
  Bound bind(Tape& tape, bool trainable) {
    Bound b{};
    auto leaf = [&](Tensor& t) {
      return trainable ? tape.param(t) : tape.input(Tensor(t.shape, t.data));
    };
    b.w1 = leaf(extractor_.w1);
    b.b1 = leaf(extractor_.b1);
    b.w2 = leaf(extractor_.w2);
    b.b2 = leaf(extractor_.b2);
    if (kind_ == HeadKind::Linear) {
      b.head_w = leaf(linear_.weight);
      b.head_b = leaf(linear_.bias);
    } else {
      b.head_w = leaf(cosine_.weight);
      b.tau = leaf(cosine_.tau);
    }
    return b;
  }

  Tape::Id features(Tape& tape, const Bound& b, Tape::Id x) const {
    auto h = tape.relu(tape.add(tape.matvec(b.w1, x), b.b1));
    return tape.add(tape.matvec(b.w2, h), b.b2);
  }

  Tape::Id logits(Tape& tape, const Bound& b, Tape::Id f) const {
    if (kind_ == HeadKind::Linear) {
      return tape.add(tape.matvec(b.head_w, f), b.head_b);
    }
    return tape.cosine_scores(b.head_w, f, b.tau);
  }

  std::vector<double> feature_values(std::span<const double> x) const {
    Tape tape;
    auto b = const_cast<Model*>(this)->bind(tape, false);
    auto f = features(
        tape, b, tape.input(Tensor::from_vector({x.begin(), x.end()})));
    return tape.value(f).data;
  }

  std::vector<double> logit_values(std::span<const double> x) const {
    Tape tape;
    auto b = const_cast<Model*>(this)->bind(tape, false);
    auto f = features(
        tape, b, tape.input(Tensor::from_vector({x.begin(), x.end()})));
    return tape.value(logits(tape, b, f)).data;
  }

 private:
  friend Model load_checkpoint(std::istream&);

  Model() = default;

  std::size_t input_dim_ = 0;
  std::size_t hidden_dim_ = 0;
  std::size_t embed_dim_ = 0;
  std::size_t num_classes_ = 0;
  HeadKind kind_ = HeadKind::Cosine;
  MlpExtractor extractor_;
  LinearHead linear_;
  CosineHead cosine_;
};

// ---- spec-shaped convenience ops ---------------------------------------------

inline Tensor extract(const Model& model, std::span<const double> x) {
  if (x.size() != model.input_dim()) {
    throw ShapeError("extract: input has " + std::to_string(x.size()) +
                     " features, extractor expects " +
                     std::to_string(model.input_dim()));
  }
  return Tensor::from_vector(model.feature_values(x));
}

inline Tensor linear_logits(const Tensor& h, const LinearHead& head) {
  Tape tape;
  auto out = tape.add(
      tape.matvec(tape.input(Tensor(head.weight.shape, head.weight.data)),
                  tape.input(Tensor(h.shape, h.data))),
      tape.input(Tensor(head.bias.shape, head.bias.data)));
  return tape.value(out);
}

inline Tensor cosine_logits(const Tensor& h, const CosineHead& head) {
  Tape tape;
  auto out = tape.cosine_scores(
      tape.input(Tensor(head.weight.shape, head.weight.data)),
      tape.input(Tensor(h.shape, h.data)),
      tape.input(Tensor(head.tau.shape, head.tau.data)));
  return tape.value(out);
}

// ---- checkpoint format ---------------------------------------------------------
//
//   ckpt v1 <num_entries>
//   <key> <rank> <dims...>
//   <values...>                 (row-major, one line)

inline void save_checkpoint(const Model& model, std::ostream& out) {
  std::vector<std::pair<std::string, const Tensor*>> entries;
  const Tensor head_kind =
      Tensor::scalar(model.head_kind() == HeadKind::Linear ? 0.0 : 1.0);
  const Tensor clamp =
      Tensor::scalar(model.cosine_head().clamp ? 1.0 : 0.0);
  entries.emplace_back("meta.head_kind", &head_kind);
  entries.emplace_back("meta.clamp_tau", &clamp);
  entries.emplace_back("extractor.w1", &model.extractor().w1);
  entries.emplace_back("extractor.b1", &model.extractor().b1);
  entries.emplace_back("extractor.w2", &model.extractor().w2);
  entries.emplace_back("extractor.b2", &model.extractor().b2);
  if (model.head_kind() == HeadKind::Linear) {
    entries.emplace_back("head.weight", &model.linear_head().weight);
    entries.emplace_back("head.bias", &model.linear_head().bias);
  } else {
    entries.emplace_back("head.weight", &model.cosine_head().weight);
    entries.emplace_back("head.tau", &model.cosine_head().tau);
  }
  out << "ckpt v1 " << entries.size() << "\n";
  for (const auto& [key, tensor] : entries) {
    out << key << " " << tensor->rank();
    for (std::size_t d : tensor->shape) out << " " << d;
    out << "\n";
    for (std::size_t i = 0; i < tensor->size(); ++i) {
      if (i) out << " ";
      out << detail::fmt_double(tensor->data[i]);
    }
    out << "\n";
  }
}

inline void save_checkpoint(const Model& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("save_checkpoint: cannot open " + path);
  save_checkpoint(model, out);
  if (!out) throw IoError("save_checkpoint: write failed for " + path);
}

inline Model load_checkpoint(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("line 1: missing header");
  std::istringstream head(line);
  std::string magic, version;
  long long n = 0;
  if (!(head >> magic >> version >> n) || magic != "ckpt" || version != "v1" ||
      n < 1) {
    throw ParseError("line 1: malformed checkpoint header '" + line + "'");
  }
  std::map<std::string, Tensor> entries;
  std::size_t line_no = 1;
  for (long long e = 0; e < n; ++e) {
    if (!std::getline(in, line)) {
      throw ParseError("line " + std::to_string(line_no + 1) +
                       ": unexpected end of file");
    }
    ++line_no;
    std::istringstream meta(line);
    std::string key;
    long long rank = -1;
    if (!(meta >> key >> rank) || rank < 0) {
      throw ParseError("line " + std::to_string(line_no) +
                       ": malformed entry header '" + line + "'");
    }
    Shape shape;
    for (long long r = 0; r < rank; ++r) {
      long long d = 0;
      if (!(meta >> d) || d < 1) {
        throw ParseError("line " + std::to_string(line_no) +
                         ": malformed dimensions in '" + line + "'");
      }
      shape.push_back(static_cast<std::size_t>(d));
    }
    if (!std::getline(in, line)) {
      throw ParseError("line " + std::to_string(line_no + 1) +
                       ": unexpected end of file");
    }
    ++line_no;
    std::istringstream vals(line);
    std::vector<double> data;
    data.reserve(shape_size(shape));
    std::string tok;
    while (vals >> tok) data.push_back(detail::parse_double(tok, line_no));
    if (data.size() != shape_size(shape)) {
      throw ParseError("line " + std::to_string(line_no) + ": expected " +
                       std::to_string(shape_size(shape)) + " values, got " +
                       std::to_string(data.size()));
    }
    entries.emplace(key, Tensor(std::move(shape), std::move(data)));
  }
  auto take = [&](const std::string& key) {
    auto it = entries.find(key);
    if (it == entries.end()) {
      throw ParseError("checkpoint is missing entry '" + key + "'");
    }
    Tensor t = std::move(it->second);
    t.requires_grad = true;
    return t;
  };

  Model model;
  const bool is_cosine = take("meta.head_kind").value() != 0.0;
  const bool clamp = take("meta.clamp_tau").value() != 0.0;
  model.kind_ = is_cosine ? HeadKind::Cosine : HeadKind::Linear;
  model.extractor_.w1 = take("extractor.w1");
  model.extractor_.b1 = take("extractor.b1");
  model.extractor_.w2 = take("extractor.w2");
  model.extractor_.b2 = take("extractor.b2");
  if (!model.extractor_.w1.is_matrix() || !model.extractor_.w2.is_matrix()) {
    throw ParseError("checkpoint: extractor weights must be matrices");
  }
  model.hidden_dim_ = model.extractor_.w1.rows();
  model.input_dim_ = model.extractor_.w1.cols();
  model.embed_dim_ = model.extractor_.w2.rows();
  Tensor head_w = take("head.weight");
  if (!head_w.is_matrix() || head_w.cols() != model.embed_dim_) {
    throw ParseError("checkpoint: head weight shape inconsistent with "
                     "extractor output");
  }
  model.num_classes_ = head_w.rows();
  if (is_cosine) {
    model.cosine_.weight = std::move(head_w);
    model.cosine_.tau = take("head.tau");
    model.cosine_.clamp = clamp;
    model.linear_.weight = Tensor::zeros({model.num_classes_, model.embed_dim_});
    model.linear_.bias = Tensor::zeros({model.num_classes_});
  } else {
    model.linear_.weight = std::move(head_w);
    model.linear_.bias = take("head.bias");
    model.cosine_.weight = Tensor::zeros({model.num_classes_, model.embed_dim_});
    model.cosine_.tau = Tensor::scalar(1.0);
  }
  return model;
}

inline Model load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("load_checkpoint: cannot open " + path);
  return load_checkpoint(in);
}

}  // namespace heavytail
