#include "hilmares/nn.hpp"

#include <Eigen/Core>
#include <cmath>

namespace hilmares::nn {

using MatMap =
    Eigen::Map<Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic,
                             Eigen::RowMajor>>;
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic,
                                   Eigen::RowMajor>>;

bool Tensor::all_finite() const {
  for (float x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

void matmul_nt(const float* a, const float* b, float* c, int n, int k, int m) {
  ConstMatMap A(a, n, k), B(b, m, k);
  MatMap C(c, n, m);
  C.noalias() = A * B.transpose();
}

void matmul_nn(const float* a, const float* b, float* c, int n, int k, int m) {
  ConstMatMap A(a, n, k), B(b, k, m);
  MatMap C(c, n, m);
  C.noalias() = A * B;
}

void matmul_tn_acc(const float* a, const float* b, float* c, int n, int k,
                   int m) {
  ConstMatMap A(a, k, n), B(b, k, m);
  MatMap C(c, n, m);
  C.noalias() += A.transpose() * B;
}

Act act_from_string(const std::string& s) {
  if (s == "linear") return Act::Linear;
  if (s == "relu") return Act::ReLU;
  if (s == "elu") return Act::ELU;
  if (s == "tanh") return Act::Tanh;
  throw ConfigError("unknown activation: " + s);
}

std::string act_to_string(Act a) {
  switch (a) {
    case Act::Linear: return "linear";
    case Act::ReLU: return "relu";
    case Act::ELU: return "elu";
    case Act::Tanh: return "tanh";
  }
  return "linear";
}

namespace {

void apply_act(Act act, Tensor& t) {
  switch (act) {
    case Act::Linear:
      return;
    case Act::ReLU:
      for (float& x : t.v) x = x > 0.0f ? x : 0.0f;
      return;
    case Act::ELU:
      for (float& x : t.v) x = x > 0.0f ? x : std::expm1(x);
      return;
    case Act::Tanh:
      for (float& x : t.v) x = std::tanh(x);
      return;
  }
}

// d(act)/dz given the pre-activation z, multiplied into g.
void apply_act_grad(Act act, const Tensor& z, Tensor& g) {
  switch (act) {
    case Act::Linear:
      return;
    case Act::ReLU:
      for (size_t i = 0; i < g.v.size(); ++i)
        if (z.v[i] <= 0.0f) g.v[i] = 0.0f;
      return;
    case Act::ELU:
      for (size_t i = 0; i < g.v.size(); ++i)
        if (z.v[i] <= 0.0f) g.v[i] *= std::exp(z.v[i]);
      return;
    case Act::Tanh:
      for (size_t i = 0; i < g.v.size(); ++i) {
        const float th = std::tanh(z.v[i]);
        g.v[i] *= 1.0f - th * th;
      }
      return;
  }
}

void orthogonal_ish_init(Tensor& W, int fan_in, RngStream& rng,
                         double gain = 1.0) {
  // scaled-uniform fan-in init; adequate for the network sizes used here
  const double bound = gain * std::sqrt(3.0 / std::max(fan_in, 1));
  for (float& x : W.v) x = static_cast<float>(rng.uniform(-bound, bound));
}

}  // namespace

// ---------------------------------------------------------------- Dense

Dense::Dense(int in, int out, Act act)
    : in_(in), out_(out), act_(act), W({out, in}), b({out}), dW({out, in}),
      db({out}) {}

void Dense::init(RngStream& rng) { orthogonal_ish_init(W, in_, rng); }

std::vector<int> Dense::output_shape(const std::vector<int>& in) const {
  if (in.size() != 2 || in[1] != in_)
    throw ConfigError("dense(" + std::to_string(in_) + "->" +
                      std::to_string(out_) + "): bad input shape");
  return {in[0], out_};
}

Tensor Dense::forward(const Tensor& x, bool, RngStream*) {
  const int n = x.rows();
  x_ = x;
  z_ = Tensor({n, out_});
  matmul_nt(x.data(), W.data(), z_.data(), n, in_, out_);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < out_; ++j) z_.v[size_t(i) * out_ + j] += b.v[size_t(j)];
  Tensor y = z_;
  apply_act(act_, y);
  return y;
}

Tensor Dense::backward(const Tensor& grad_out) {
  Tensor g = grad_out;
  apply_act_grad(act_, z_, g);
  const int n = g.rows();
  matmul_tn_acc(g.data(), x_.data(), dW.data(), out_, n, in_);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < out_; ++j) db.v[size_t(j)] += g.v[size_t(i) * out_ + j];
  Tensor gx({n, in_});
  matmul_nn(g.data(), W.data(), gx.data(), n, out_, in_);
  return gx;
}

void Dense::params(const std::string& prefix, std::vector<ParamRef>& out) {
  out.push_back({prefix + ".weight", &W, &dW});
  out.push_back({prefix + ".bias", &b, &db});
}

nlohmann::json Dense::spec() const {
  return {{"type", "dense"}, {"in", in_}, {"out", out_},
          {"act", act_to_string(act_)}};
}

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(int in_channels, int filters, int kernel, Act act)
    : in_c_(in_channels), out_c_(filters), k_(kernel), act_(act),
      W({filters, in_channels * kernel * kernel}), b({filters}),
      dW({filters, in_channels * kernel * kernel}), db({filters}) {}

void Conv2d::init(RngStream& rng) {
  orthogonal_ish_init(W, in_c_ * k_ * k_, rng);
}

std::vector<int> Conv2d::output_shape(const std::vector<int>& in) const {
  if (in.size() != 4 || in[1] != in_c_ || in[2] < k_ || in[3] < k_)
    throw ConfigError("conv2d: bad input shape");
  return {in[0], out_c_, in[2] - k_ + 1, in[3] - k_ + 1};
}

Tensor Conv2d::forward(const Tensor& x, bool, RngStream*) {
  in_shape_ = x.shape;
  const int n = x.shape[0], h = x.shape[2], w = x.shape[3];
  const int oh = h - k_ + 1, ow = w - k_ + 1;
  const int patch = in_c_ * k_ * k_;

  cols_ = Tensor({n * oh * ow, patch});
  float* col = cols_.data();
  for (int img = 0; img < n; ++img) {
    const float* src = x.data() + int64_t(img) * in_c_ * h * w;
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        for (int c = 0; c < in_c_; ++c) {
          const float* plane = src + int64_t(c) * h * w;
          for (int ky = 0; ky < k_; ++ky) {
            const float* row = plane + int64_t(oy + ky) * w + ox;
            for (int kx = 0; kx < k_; ++kx) *col++ = row[kx];
          }
        }
      }
    }
  }

  Tensor zmat({n * oh * ow, out_c_});
  matmul_nt(cols_.data(), W.data(), zmat.data(), n * oh * ow, patch, out_c_);

  z_ = Tensor({n, out_c_, oh, ow});
  for (int img = 0; img < n; ++img)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        const float* zr =
            zmat.data() + (int64_t(img) * oh * ow + int64_t(oy) * ow + ox) * out_c_;
        for (int c = 0; c < out_c_; ++c)
          z_.v[((int64_t(img) * out_c_ + c) * oh + oy) * ow + ox] =
              zr[c] + b.v[size_t(c)];
      }
  Tensor y = z_;
  apply_act(act_, y);
  return y;
}

Tensor Conv2d::backward(const Tensor& grad_out) {
  Tensor g = grad_out;
  apply_act_grad(act_, z_, g);
  const int n = in_shape_[0], h = in_shape_[2], w = in_shape_[3];
  const int oh = h - k_ + 1, ow = w - k_ + 1;
  const int patch = in_c_ * k_ * k_;

  // NCHW grad -> (N*OH*OW, out_c) layout matching the im2col matmul
  Tensor gmat({n * oh * ow, out_c_});
  for (int img = 0; img < n; ++img)
    for (int c = 0; c < out_c_; ++c)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox)
          gmat.v[(int64_t(img) * oh * ow + int64_t(oy) * ow + ox) * out_c_ + c] =
              g.v[((int64_t(img) * out_c_ + c) * oh + oy) * ow + ox];

  matmul_tn_acc(gmat.data(), cols_.data(), dW.data(), out_c_, n * oh * ow,
                patch);
  for (int r = 0; r < n * oh * ow; ++r)
    for (int c = 0; c < out_c_; ++c)
      db.v[size_t(c)] += gmat.v[int64_t(r) * out_c_ + c];

  Tensor gcols({n * oh * ow, patch});
  matmul_nn(gmat.data(), W.data(), gcols.data(), n * oh * ow, out_c_, patch);

  Tensor gx(in_shape_);
  const float* col = gcols.data();
  for (int img = 0; img < n; ++img) {
    float* dst = gx.data() + int64_t(img) * in_c_ * h * w;
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox)
        for (int c = 0; c < in_c_; ++c) {
          float* plane = dst + int64_t(c) * h * w;
          for (int ky = 0; ky < k_; ++ky) {
            float* row = plane + int64_t(oy + ky) * w + ox;
            for (int kx = 0; kx < k_; ++kx) row[kx] += *col++;
          }
        }
  }
  return gx;
}

void Conv2d::params(const std::string& prefix, std::vector<ParamRef>& out) {
  out.push_back({prefix + ".weight", &W, &dW});
  out.push_back({prefix + ".bias", &b, &db});
}

nlohmann::json Conv2d::spec() const {
  return {{"type", "conv2d"}, {"in_channels", in_c_}, {"filters", out_c_},
          {"kernel", k_}, {"act", act_to_string(act_)}};
}

// ---------------------------------------------------------------- MaxPool2d

MaxPool2d::MaxPool2d(int kernel, int stride) : k_(kernel), stride_(stride) {}

std::vector<int> MaxPool2d::output_shape(const std::vector<int>& in) const {
  if (in.size() != 4 || in[2] < k_ || in[3] < k_)
    throw ConfigError("maxpool: bad input shape");
  return {in[0], in[1], (in[2] - k_) / stride_ + 1, (in[3] - k_) / stride_ + 1};
}

Tensor MaxPool2d::forward(const Tensor& x, bool, RngStream*) {
  in_shape_ = x.shape;
  const int n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3];
  const int oh = (h - k_) / stride_ + 1, ow = (w - k_) / stride_ + 1;
  Tensor y({n, c, oh, ow});
  argmax_.assign(y.v.size(), 0);
  for (int img = 0; img < n; ++img)
    for (int ch = 0; ch < c; ++ch) {
      const float* plane = x.data() + (int64_t(img) * c + ch) * h * w;
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          float best = -std::numeric_limits<float>::infinity();
          int32_t best_idx = 0;
          for (int ky = 0; ky < k_; ++ky)
            for (int kx = 0; kx < k_; ++kx) {
              const int yy = oy * stride_ + ky, xx = ox * stride_ + kx;
              const float val = plane[int64_t(yy) * w + xx];
              if (val > best) {
                best = val;
                best_idx = static_cast<int32_t>(yy * w + xx);
              }
            }
          const int64_t oidx = ((int64_t(img) * c + ch) * oh + oy) * ow + ox;
          y.v[oidx] = best;
          argmax_[size_t(oidx)] = best_idx;
        }
    }
  return y;
}

Tensor MaxPool2d::backward(const Tensor& grad_out) {
  const int n = in_shape_[0], c = in_shape_[1], h = in_shape_[2],
            w = in_shape_[3];
  Tensor gx(in_shape_);
  const int64_t plane = int64_t(h) * w;
  const int64_t planes = grad_out.size() / (int64_t(n) * c);
  for (int img = 0; img < n; ++img)
    for (int ch = 0; ch < c; ++ch) {
      const int64_t base_o = (int64_t(img) * c + ch) * planes;
      const int64_t base_i = (int64_t(img) * c + ch) * plane;
      for (int64_t i = 0; i < planes; ++i)
        gx.v[base_i + argmax_[size_t(base_o + i)]] += grad_out.v[base_o + i];
    }
  return gx;
}

nlohmann::json MaxPool2d::spec() const {
  return {{"type", "maxpool"}, {"kernel", k_}, {"stride", stride_}};
}

// ---------------------------------------------------------------- LayerNorm

LayerNorm::LayerNorm(int dim, double eps)
    : dim_(dim), eps_(eps), gamma({dim}), beta({dim}), dgamma({dim}),
      dbeta({dim}) {
  std::fill(gamma.v.begin(), gamma.v.end(), 1.0f);
}

std::vector<int> LayerNorm::output_shape(const std::vector<int>& in) const {
  if (in.size() != 2 || in[1] != dim_)
    throw ConfigError("layernorm: bad input shape");
  return in;
}

Tensor LayerNorm::forward(const Tensor& x, bool, RngStream*) {
  const int n = x.rows();
  xhat_ = Tensor(x.shape);
  inv_std_.assign(size_t(n), 0.0f);
  Tensor y(x.shape);
  for (int i = 0; i < n; ++i) {
    const float* row = x.data() + int64_t(i) * dim_;
    double mean = 0.0;
    for (int j = 0; j < dim_; ++j) mean += row[j];
    mean /= dim_;
    double var = 0.0;
    for (int j = 0; j < dim_; ++j) {
      const double d = row[j] - mean;
      var += d * d;
    }
    var /= dim_;
    const float inv = static_cast<float>(1.0 / std::sqrt(var + eps_));
    inv_std_[size_t(i)] = inv;
    for (int j = 0; j < dim_; ++j) {
      const float xh = (row[j] - static_cast<float>(mean)) * inv;
      xhat_.v[int64_t(i) * dim_ + j] = xh;
      y.v[int64_t(i) * dim_ + j] = gamma.v[size_t(j)] * xh + beta.v[size_t(j)];
    }
  }
  return y;
}

Tensor LayerNorm::backward(const Tensor& grad_out) {
  const int n = grad_out.rows();
  Tensor gx(grad_out.shape);
  for (int i = 0; i < n; ++i) {
    const float* g = grad_out.data() + int64_t(i) * dim_;
    const float* xh = xhat_.data() + int64_t(i) * dim_;
    double sum_g = 0.0, sum_gx = 0.0;
    for (int j = 0; j < dim_; ++j) {
      const double gg = double(g[j]) * gamma.v[size_t(j)];
      sum_g += gg;
      sum_gx += gg * xh[j];
      dgamma.v[size_t(j)] += g[j] * xh[j];
      dbeta.v[size_t(j)] += g[j];
    }
    const double inv = inv_std_[size_t(i)];
    for (int j = 0; j < dim_; ++j) {
      const double gg = double(g[j]) * gamma.v[size_t(j)];
      gx.v[int64_t(i) * dim_ + j] = static_cast<float>(
          inv * (gg - sum_g / dim_ - double(xh[j]) * sum_gx / dim_));
    }
  }
  return gx;
}

void LayerNorm::params(const std::string& prefix, std::vector<ParamRef>& out) {
  out.push_back({prefix + ".gamma", &gamma, &dgamma});
  out.push_back({prefix + ".beta", &beta, &dbeta});
}

nlohmann::json LayerNorm::spec() const {
  return {{"type", "layernorm"}, {"dim", dim_}};
}

// ---------------------------------------------------------------- Dropout

Dropout::Dropout(double rate) : rate_(rate) {}

std::vector<int> Dropout::output_shape(const std::vector<int>& in) const {
  return in;
}

Tensor Dropout::forward(const Tensor& x, bool train, RngStream* rng) {
  active_ = train && rate_ > 0.0 && rng != nullptr;
  if (!active_) return x;
  mask_ = Tensor(x.shape);
  const float keep_inv = static_cast<float>(1.0 / (1.0 - rate_));
  Tensor y(x.shape);
  for (size_t i = 0; i < x.v.size(); ++i) {
    const float m = rng->canonical() < rate_ ? 0.0f : keep_inv;
    mask_.v[i] = m;
    y.v[i] = x.v[i] * m;
  }
  return y;
}

Tensor Dropout::backward(const Tensor& grad_out) {
  if (!active_) return grad_out;
  Tensor g(grad_out.shape);
  for (size_t i = 0; i < g.v.size(); ++i) g.v[i] = grad_out.v[i] * mask_.v[i];
  return g;
}

nlohmann::json Dropout::spec() const {
  return {{"type", "dropout"}, {"rate", rate_}};
}

// ---------------------------------------------------------------- Flatten

Tensor Flatten::forward(const Tensor& x, bool, RngStream*) {
  in_shape_ = x.shape;
  Tensor y = x;
  y.shape = {x.shape[0], static_cast<int>(x.feature_count())};
  return y;
}

Tensor Flatten::backward(const Tensor& grad_out) {
  Tensor g = grad_out;
  g.shape = in_shape_;
  return g;
}

std::vector<int> Flatten::output_shape(const std::vector<int>& in) const {
  int64_t n = 1;
  for (size_t i = 1; i < in.size(); ++i) n *= in[i];
  return {in[0], static_cast<int>(n)};
}

nlohmann::json Flatten::spec() const { return {{"type", "flatten"}}; }

// ---------------------------------------------------------------- Activation

Tensor Activation::forward(const Tensor& x, bool, RngStream*) {
  z_ = x;
  Tensor y = x;
  apply_act(act_, y);
  return y;
}

Tensor Activation::backward(const Tensor& grad_out) {
  Tensor g = grad_out;
  apply_act_grad(act_, z_, g);
  return g;
}

nlohmann::json Activation::spec() const {
  return {{"type", "act"}, {"act", act_to_string(act_)}};
}

// ---------------------------------------------------------------- Sequential

void Sequential::push(std::unique_ptr<Layer> l) {
  if (shape_.empty()) {
    if (input_shape_.empty())
      throw ConfigError("sequential: input shape not declared");
    shape_ = input_shape_;
    if (shape_[0] <= 0) shape_[0] = 1;  // batch placeholder
  }
  shape_ = l->output_shape(shape_);
  layers_.push_back(std::move(l));
}

Dense& Sequential::dense(int in, int out, Act act) {
  if (input_shape_.empty() && layers_.empty()) input_shape_ = {1, in};
  auto l = std::make_unique<Dense>(in, out, act);
  Dense& ref = *l;
  push(std::move(l));
  return ref;
}

Conv2d& Sequential::conv2d(int in_channels, int filters, int kernel, Act act) {
  auto l = std::make_unique<Conv2d>(in_channels, filters, kernel, act);
  Conv2d& ref = *l;
  push(std::move(l));
  return ref;
}

MaxPool2d& Sequential::maxpool(int kernel, int stride) {
  auto l = std::make_unique<MaxPool2d>(kernel, stride);
  MaxPool2d& ref = *l;
  push(std::move(l));
  return ref;
}

LayerNorm& Sequential::layernorm(int dim) {
  auto l = std::make_unique<LayerNorm>(dim);
  LayerNorm& ref = *l;
  push(std::move(l));
  return ref;
}

Dropout& Sequential::dropout(double rate) {
  auto l = std::make_unique<Dropout>(rate);
  Dropout& ref = *l;
  push(std::move(l));
  return ref;
}

Flatten& Sequential::flatten() {
  auto l = std::make_unique<Flatten>();
  Flatten& ref = *l;
  push(std::move(l));
  return ref;
}

Activation& Sequential::activation(Act act) {
  auto l = std::make_unique<Activation>(act);
  Activation& ref = *l;
  push(std::move(l));
  return ref;
}

Tensor Sequential::forward(const Tensor& x, bool train, RngStream* rng) {
  Tensor t = x;
  for (auto& l : layers_) t = l->forward(t, train, rng);
  return t;
}

Tensor Sequential::backward(const Tensor& grad_out) {
  Tensor g = grad_out;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it)
    g = (*it)->backward(g);
  return g;
}

void Sequential::params(const std::string& prefix, std::vector<ParamRef>& out) {
  for (size_t i = 0; i < layers_.size(); ++i)
    layers_[i]->params(prefix + ".l" + std::to_string(i), out);
}

void Sequential::init(RngStream& rng) {
  for (auto& l : layers_) {
    if (auto* d = dynamic_cast<Dense*>(l.get())) d->init(rng);
    if (auto* c = dynamic_cast<Conv2d*>(l.get())) c->init(rng);
  }
}

nlohmann::json Sequential::spec() const {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : layers_) layers.push_back(l->spec());
  return {{"input", input_shape_}, {"layers", layers}};
}

Sequential build_sequential(const nlohmann::json& spec) {
  std::vector<int> input = spec.at("input").get<std::vector<int>>();
  Sequential seq(input);
  for (const auto& l : spec.at("layers")) {
    const std::string type = l.at("type");
    if (type == "dense")
      seq.dense(l.at("in"), l.at("out"), act_from_string(l.at("act")));
    else if (type == "conv2d")
      seq.conv2d(l.at("in_channels"), l.at("filters"), l.at("kernel"),
                 act_from_string(l.value("act", "linear")));
    else if (type == "maxpool")
      seq.maxpool(l.at("kernel"), l.at("stride"));
    else if (type == "layernorm")
      seq.layernorm(l.at("dim"));
    else if (type == "dropout")
      seq.dropout(l.at("rate"));
    else if (type == "flatten")
      seq.flatten();
    else if (type == "act")
      seq.activation(act_from_string(l.at("act")));
    else
      throw ConfigError("unknown layer type: " + type);
  }
  return seq;
}

// ---------------------------------------------------------------- GruCell

GruCell::GruCell(int in, int hidden)
    : in_(in), hidden_(hidden), Wz({hidden, in}), Wr({hidden, in}),
      Wn({hidden, in}), Uz({hidden, hidden}), Ur({hidden, hidden}),
      Un({hidden, hidden}), bz({hidden}), br({hidden}), bn({hidden}),
      dWz({hidden, in}), dWr({hidden, in}), dWn({hidden, in}),
      dUz({hidden, hidden}), dUr({hidden, hidden}), dUn({hidden, hidden}),
      dbz({hidden}), dbr({hidden}), dbn({hidden}) {}

void GruCell::init(RngStream& rng) {
  for (Tensor* w : {&Wz, &Wr, &Wn}) orthogonal_ish_init(*w, in_, rng);
  for (Tensor* u : {&Uz, &Ur, &Un}) orthogonal_ish_init(*u, hidden_, rng);
}

namespace {
inline float sigmoidf(float x) { return 1.0f / (1.0f + std::exp(-x)); }
}  // namespace

Tensor GruCell::forward_step(const Tensor& x, const Tensor& h,
                             bool keep_tape) {
  const int n = x.rows();
  auto gate = [&](const Tensor& Wx, const Tensor& Uh, const Tensor& bias,
                  const Tensor& hin) {
    Tensor g({n, hidden_});
    matmul_nt(x.data(), Wx.data(), g.data(), n, in_, hidden_);
    Tensor uh({n, hidden_});
    matmul_nt(hin.data(), Uh.data(), uh.data(), n, hidden_, hidden_);
    for (int64_t i = 0; i < g.size(); ++i)
      g.v[size_t(i)] += uh.v[size_t(i)] + bias.v[size_t(i % hidden_)];
    return g;
  };

  Tensor z = gate(Wz, Uz, bz, h);
  Tensor r = gate(Wr, Ur, br, h);
  for (float& v : z.v) v = sigmoidf(v);
  for (float& v : r.v) v = sigmoidf(v);

  Tensor rh({n, hidden_});
  for (int64_t i = 0; i < rh.size(); ++i)
    rh.v[size_t(i)] = r.v[size_t(i)] * h.v[size_t(i)];
  Tensor ncand = gate(Wn, Un, bn, rh);
  for (float& v : ncand.v) v = std::tanh(v);

  Tensor h_next({n, hidden_});
  for (int64_t i = 0; i < h_next.size(); ++i)
    h_next.v[size_t(i)] = (1.0f - z.v[size_t(i)]) * ncand.v[size_t(i)] +
                          z.v[size_t(i)] * h.v[size_t(i)];
  if (keep_tape) tape_.push_back({x, h, z, r, ncand, rh});
  return h_next;
}

std::pair<Tensor, Tensor> GruCell::backward_step(const Tensor& grad_h_next) {
  if (tape_.empty()) throw std::logic_error("GruCell: empty tape");
  StepCache cache = std::move(tape_.back());
  tape_.pop_back();
  const int n = grad_h_next.rows();

  Tensor dz({n, hidden_}), dn({n, hidden_}), dh({n, hidden_});
  for (int64_t i = 0; i < grad_h_next.size(); ++i) {
    const float g = grad_h_next.v[size_t(i)];
    dz.v[size_t(i)] = g * (cache.h.v[size_t(i)] - cache.n.v[size_t(i)]);
    dn.v[size_t(i)] = g * (1.0f - cache.z.v[size_t(i)]);
    dh.v[size_t(i)] = g * cache.z.v[size_t(i)];
  }

  Tensor dn_pre = dn;
  for (int64_t i = 0; i < dn_pre.size(); ++i)
    dn_pre.v[size_t(i)] *= 1.0f - cache.n.v[size_t(i)] * cache.n.v[size_t(i)];
  Tensor drh({n, hidden_});
  matmul_nn(dn_pre.data(), Un.data(), drh.data(), n, hidden_, hidden_);
  Tensor dr({n, hidden_});
  for (int64_t i = 0; i < dr.size(); ++i) {
    dr.v[size_t(i)] = drh.v[size_t(i)] * cache.h.v[size_t(i)];
    dh.v[size_t(i)] += drh.v[size_t(i)] * cache.r.v[size_t(i)];
  }
  Tensor dz_pre = dz, dr_pre = dr;
  for (int64_t i = 0; i < dz_pre.size(); ++i) {
    const float z = cache.z.v[size_t(i)], r = cache.r.v[size_t(i)];
    dz_pre.v[size_t(i)] *= z * (1.0f - z);
    dr_pre.v[size_t(i)] *= r * (1.0f - r);
  }

  matmul_tn_acc(dz_pre.data(), cache.x.data(), dWz.data(), hidden_, n, in_);
  matmul_tn_acc(dr_pre.data(), cache.x.data(), dWr.data(), hidden_, n, in_);
  matmul_tn_acc(dn_pre.data(), cache.x.data(), dWn.data(), hidden_, n, in_);
  matmul_tn_acc(dz_pre.data(), cache.h.data(), dUz.data(), hidden_, n, hidden_);
  matmul_tn_acc(dr_pre.data(), cache.h.data(), dUr.data(), hidden_, n, hidden_);
  matmul_tn_acc(dn_pre.data(), cache.rh.data(), dUn.data(), hidden_, n,
                hidden_);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < hidden_; ++j) {
      dbz.v[size_t(j)] += dz_pre.v[int64_t(i) * hidden_ + j];
      dbr.v[size_t(j)] += dr_pre.v[int64_t(i) * hidden_ + j];
      dbn.v[size_t(j)] += dn_pre.v[int64_t(i) * hidden_ + j];
    }

  Tensor dx({n, in_}), tmp({n, in_});
  matmul_nn(dz_pre.data(), Wz.data(), dx.data(), n, hidden_, in_);
  matmul_nn(dr_pre.data(), Wr.data(), tmp.data(), n, hidden_, in_);
  for (int64_t i = 0; i < dx.size(); ++i) dx.v[size_t(i)] += tmp.v[size_t(i)];
  matmul_nn(dn_pre.data(), Wn.data(), tmp.data(), n, hidden_, in_);
  for (int64_t i = 0; i < dx.size(); ++i) dx.v[size_t(i)] += tmp.v[size_t(i)];

  Tensor dhz({n, hidden_});
  matmul_nn(dz_pre.data(), Uz.data(), dhz.data(), n, hidden_, hidden_);
  for (int64_t i = 0; i < dh.size(); ++i) dh.v[size_t(i)] += dhz.v[size_t(i)];
  matmul_nn(dr_pre.data(), Ur.data(), dhz.data(), n, hidden_, hidden_);
  for (int64_t i = 0; i < dh.size(); ++i) dh.v[size_t(i)] += dhz.v[size_t(i)];

  return {dx, dh};
}

void GruCell::clear_tape() { tape_.clear(); }

void GruCell::params(const std::string& prefix, std::vector<ParamRef>& out) {
  out.push_back({prefix + ".Wz", &Wz, &dWz});
  out.push_back({prefix + ".Wr", &Wr, &dWr});
  out.push_back({prefix + ".Wn", &Wn, &dWn});
  out.push_back({prefix + ".Uz", &Uz, &dUz});
  out.push_back({prefix + ".Ur", &Ur, &dUr});
  out.push_back({prefix + ".Un", &Un, &dUn});
  out.push_back({prefix + ".bz", &bz, &dbz});
  out.push_back({prefix + ".br", &br, &dbr});
  out.push_back({prefix + ".bn", &bn, &dbn});
}

nlohmann::json GruCell::spec() const {
  return {{"type", "gru"}, {"in", in_}, {"hidden", hidden_}};
}

// ---------------------------------------------------------------- Adam

Adam::Adam(std::vector<ParamRef> params, const AdamConfig& cfg)
    : params_(std::move(params)), cfg_(cfg) {
  for (const auto& p : params_) {
    m_.emplace_back(p.value->shape);
    v_.emplace_back(p.value->shape);
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = *params_[i].value;
    Tensor& g = *params_[i].grad;
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    for (size_t j = 0; j < p.v.size(); ++j) {
      const double gj = g.v[j];
      m.v[j] = static_cast<float>(cfg_.beta1 * m.v[j] + (1.0 - cfg_.beta1) * gj);
      v.v[j] =
          static_cast<float>(cfg_.beta2 * v.v[j] + (1.0 - cfg_.beta2) * gj * gj);
      const double mhat = m.v[j] / bc1;
      const double vhat = v.v[j] / bc2;
      p.v[j] -= static_cast<float>(cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.grad->zero();
}

double Adam::clip_grad_norm(double max_norm) {
  double total = 0.0;
  for (auto& p : params_)
    for (float g : p.grad->v) total += double(g) * g;
  total = std::sqrt(total);
  if (total > max_norm && total > 1e-12) {
    const float scale = static_cast<float>(max_norm / total);
    for (auto& p : params_)
      for (float& g : p.grad->v) g *= scale;
  }
  return total;
}

}  // namespace hilmares::nn
