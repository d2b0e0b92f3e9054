#include "vip/nn.hpp"

#include "vip/error.hpp"
#include "vip/hash.hpp"
#include "vip/rng.hpp"

#include <cmath>
#include <cstring>
#include <numbers>

namespace vip {

namespace {

Dense make_dense(Eigen::Index in, Eigen::Index out, Rng& rng) {
  Dense d;
  d.weight.resize(in, out);
  const double std = std::sqrt(2.0 / static_cast<double>(in));
  for (Eigen::Index c = 0; c < out; ++c)
    for (Eigen::Index r = 0; r < in; ++r) d.weight(r, c) = std * rng.normal();
  d.bias = Matrix::Zero(1, out);
  return d;
}

ad::Var dense_forward(ad::Tape& tape, ad::Var x, const Dense& d, std::size_t& slot, bool trainable) {
  ad::Var w = trainable ? tape.parameter(d.weight, slot) : tape.constant(d.weight);
  ad::Var b = trainable ? tape.parameter(d.bias, slot + 1) : tape.constant(d.bias);
  slot += 2;
  return ad::add_row(ad::matmul(x, w), b);
}

}  // namespace

std::size_t param_count(const Dense& d) {
  return static_cast<std::size_t>(d.weight.size() + d.bias.size());
}

NetArch preset_arch(const std::string& name) {
  if (name == "teacher") return {2, 16, 64, 4};
  if (name == "base_student") return {2, 16, 32, 2};
  if (name == "vip_teacher") return {2, 16, 64, 6};
  if (name == "tiny") return {2, 4, 8, 2};
  throw ConfigError("preset", "unknown network preset '" + name + "'");
}

Matrix time_embedding(std::span<const int> t, int dim) {
  Matrix e(static_cast<Eigen::Index>(t.size()), dim);
  const int half = dim / 2;
  for (std::size_t i = 0; i < t.size(); ++i) {
    for (int k = 0; k < half; ++k) {
      const double freq = std::exp(-std::log(10000.0) * k / std::max(half, 1));
      const double a = t[i] * freq;
      e(static_cast<Eigen::Index>(i), k) = std::sin(a);
      e(static_cast<Eigen::Index>(i), half + k) = std::cos(a);
    }
    if (dim % 2 == 1) e(static_cast<Eigen::Index>(i), dim - 1) = 0.0;
  }
  return e;
}

EpsilonNet EpsilonNet::create(const NetArch& arch, std::uint64_t seed) {
  if (arch.input_dim <= 0) throw ConfigError("arch.input_dim", "must be positive");
  if (arch.time_embed_dim <= 0) throw ConfigError("arch.time_embed_dim", "must be positive");
  if (arch.hidden_width <= 0) throw ConfigError("arch.hidden_width", "must be positive");
  if (arch.n_blocks <= 0) throw ConfigError("arch.n_blocks", "must be positive");
  Rng rng(seed);
  EpsilonNet net;
  net.arch_ = arch;
  const Eigen::Index w = arch.hidden_width;
  net.embed_ = make_dense(arch.input_dim + arch.time_embed_dim, w, rng);
  for (int i = 0; i < arch.n_blocks; ++i) {
    ResidualBlock b;
    b.dense1 = make_dense(w, w, rng);
    b.dense2 = make_dense(w, w, rng);
    net.blocks_.push_back(std::move(b));
  }
  net.active_.assign(static_cast<std::size_t>(arch.n_blocks), true);
  net.head_ = make_dense(w, arch.input_dim, rng);
  return net;
}

EpsilonNet EpsilonNet::from_params(const NetArch& arch, std::vector<bool> mask, const std::vector<Matrix>& values) {
  EpsilonNet net = create(arch, 0);
  if (mask.size() != net.active_.size())
    throw ShapeError("block_active", "mask has " + std::to_string(mask.size()) + " entries for " +
                                         std::to_string(net.active_.size()) + " blocks");
  net.active_ = std::move(mask);
  auto slots = net.params();
  const auto names = net.param_names();
  if (values.size() != slots.size())
    throw ShapeError("params", "expected " + std::to_string(slots.size()) + " parameters, got " +
                                   std::to_string(values.size()));
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (values[i].rows() != slots[i]->rows() || values[i].cols() != slots[i]->cols())
      throw ShapeError(names[i], names[i] + ": shape mismatch");
    if (!values[i].allFinite()) throw NumericError(names[i] + ": non-finite entry");
    *slots[i] = values[i];
  }
  return net;
}

void EpsilonNet::set_block_active(std::size_t i, bool active) {
  if (i >= active_.size()) throw Error("block index " + std::to_string(i) + " out of range");
  active_[i] = active;
}

std::size_t EpsilonNet::active_blocks() const {
  std::size_t n = 0;
  for (bool a : active_) n += a ? 1 : 0;
  return n;
}

std::vector<std::string> EpsilonNet::param_names() const {
  std::vector<std::string> names{"embed.weight", "embed.bias"};
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const auto p = "blocks." + std::to_string(i);
    names.push_back(p + ".dense1.weight");
    names.push_back(p + ".dense1.bias");
    names.push_back(p + ".dense2.weight");
    names.push_back(p + ".dense2.bias");
  }
  names.push_back("head.weight");
  names.push_back("head.bias");
  return names;
}

std::vector<Matrix*> EpsilonNet::params() {
  std::vector<Matrix*> out{&embed_.weight, &embed_.bias};
  for (auto& b : blocks_) {
    out.push_back(&b.dense1.weight);
    out.push_back(&b.dense1.bias);
    out.push_back(&b.dense2.weight);
    out.push_back(&b.dense2.bias);
  }
  out.push_back(&head_.weight);
  out.push_back(&head_.bias);
  return out;
}

std::vector<const Matrix*> EpsilonNet::params() const {
  auto mut = const_cast<EpsilonNet*>(this)->params();
  return {mut.begin(), mut.end()};
}

std::vector<std::pair<Eigen::Index, Eigen::Index>> EpsilonNet::param_shapes() const {
  std::vector<std::pair<Eigen::Index, Eigen::Index>> shapes;
  for (const Matrix* p : params()) shapes.emplace_back(p->rows(), p->cols());
  return shapes;
}

std::vector<bool> EpsilonNet::param_active() const {
  std::vector<bool> out{true, true};
  for (bool a : active_) out.insert(out.end(), 4, a);
  out.push_back(true);
  out.push_back(true);
  return out;
}

ad::Var EpsilonNet::forward(ad::Tape& tape, ad::Var x, std::span<const int> t, bool trainable) const {
  const auto& xv = x.value();
  if (xv.cols() != arch_.input_dim)
    throw ShapeError("input_dim", "forward: expected " + std::to_string(arch_.input_dim) + " input columns, got " +
                                      std::to_string(xv.cols()));
  if (static_cast<std::size_t>(xv.rows()) != t.size())
    throw ShapeError("batch", "forward: " + std::to_string(xv.rows()) + " rows but " + std::to_string(t.size()) +
                                  " timesteps");
  std::size_t slot = 0;
  ad::Var in = ad::concat_cols(x, tape.constant(time_embedding(t, arch_.time_embed_dim)));
  ad::Var h = ad::silu(dense_forward(tape, in, embed_, slot, trainable));
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    if (!active_[i]) {
      slot += 4;
      continue;
    }
    ad::Var f = ad::silu(dense_forward(tape, h, blocks_[i].dense1, slot, trainable));
    f = dense_forward(tape, f, blocks_[i].dense2, slot, trainable);
    h = ad::add(h, f);
  }
  return dense_forward(tape, h, head_, slot, trainable);
}

Matrix predict_noise(const EpsilonNet& net, const Matrix& x, std::span<const int> t) {
  ad::Tape tape;
  return net.forward(tape, tape.constant(x), t, false).value();
}

namespace {

void silu_inplace(Matrix& m) {
  m = m.unaryExpr([](double v) { return v * (v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v))); });
}

void affine_into(Matrix& out, const Matrix& x, const Dense& d) {
  out.resize(x.rows(), d.out_dim());
  out.noalias() = x * d.weight;
  out.rowwise() += d.bias.row(0);
}

}  // namespace

const Matrix& Denoiser::operator()(const Matrix& x, std::span<const int> t) {
  const auto& a = net_.arch();
  if (x.cols() != a.input_dim) throw ShapeError("input_dim", "denoiser: wrong input width");
  if (static_cast<std::size_t>(x.rows()) != t.size()) throw ShapeError("batch", "denoiser: one timestep per row");
  in_.resize(x.rows(), a.input_dim + a.time_embed_dim);
  in_.leftCols(a.input_dim) = x;
  in_.rightCols(a.time_embed_dim) = time_embedding(t, a.time_embed_dim);
  affine_into(h_, in_, net_.embed());
  silu_inplace(h_);
  for (std::size_t i = 0; i < net_.n_blocks(); ++i) {
    if (!net_.block_active(i)) continue;
    affine_into(f_, h_, net_.block(i).dense1);
    silu_inplace(f_);
    affine_into(g_, f_, net_.block(i).dense2);
    h_ += g_;
  }
  affine_into(out_, h_, net_.head());
  return out_;
}

std::size_t param_count(const EpsilonNet& net) {
  std::size_t total = param_count(net.embed()) + param_count(net.head());
  for (std::size_t i = 0; i < net.n_blocks(); ++i)
    if (net.block_active(i)) total += param_count(net.block(i).dense1) + param_count(net.block(i).dense2);
  return total;
}

std::string state_hash(const EpsilonNet& net) {
  std::string bytes;
  const auto& a = net.arch();
  for (int v : {a.input_dim, a.time_embed_dim, a.hidden_width, a.n_blocks})
    bytes.append(reinterpret_cast<const char*>(&v), sizeof v);
  for (bool m : net.block_mask()) bytes.push_back(m ? '\1' : '\0');
  for (const Matrix* p : net.params())
    bytes.append(reinterpret_cast<const char*>(p->data()), static_cast<std::size_t>(p->size()) * sizeof(double));
  return sha256_hex(bytes);
}

}  // namespace vip
