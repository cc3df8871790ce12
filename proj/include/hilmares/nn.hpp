#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"

#include "hilmares/rng.hpp"

namespace hilmares::nn {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Row-major float32 tensor, up to 4-D.
struct Tensor {
  std::vector<int> shape;
  std::vector<float> v;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    v.assign(static_cast<size_t>(count(shape)), 0.0f);
  }
  static int64_t count(const std::vector<int>& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
  }
  int64_t size() const { return static_cast<int64_t>(v.size()); }
  int rows() const { return shape.empty() ? 0 : shape[0]; }
  // product of all but the leading (batch) dimension
  int64_t feature_count() const {
    int64_t n = 1;
    for (size_t i = 1; i < shape.size(); ++i) n *= shape[i];
    return n;
  }
  void zero() { std::fill(v.begin(), v.end(), 0.0f); }
  float* data() { return v.data(); }
  const float* data() const { return v.data(); }
  bool all_finite() const;
};

// C = A * B^T  (A: [n,k], B: [m,k], C: [n,m]); the workhorse behind every
// dense/conv layer, backed by Eigen.
void matmul_nt(const float* a, const float* b, float* c, int n, int k, int m);
// C = A * B    (A: [n,k], B: [k,m])
void matmul_nn(const float* a, const float* b, float* c, int n, int k, int m);
// C = A^T * B  (A: [k,n], B: [k,m], C: [n,m]) accumulated into C
void matmul_tn_acc(const float* a, const float* b, float* c, int n, int k,
                   int m);

enum class Act { Linear, ReLU, ELU, Tanh };
Act act_from_string(const std::string& s);
std::string act_to_string(Act a);

struct ParamRef {
  std::string name;
  Tensor* value;
  Tensor* grad;
};

class Layer {
 public:
  virtual ~Layer() = default;
  // Forward caches whatever backward needs (one outstanding pass at a time).
  virtual Tensor forward(const Tensor& x, bool train, RngStream* rng) = 0;
  virtual Tensor backward(const Tensor& grad_out) = 0;
  virtual void params(const std::string& prefix, std::vector<ParamRef>& out) {}
  virtual std::vector<int> output_shape(const std::vector<int>& in) const = 0;
  virtual nlohmann::json spec() const = 0;
};

class Dense : public Layer {
 public:
  Dense(int in, int out, Act act);
  Tensor forward(const Tensor& x, bool train, RngStream* rng) override;
  Tensor backward(const Tensor& grad_out) override;
  void params(const std::string& prefix, std::vector<ParamRef>& out) override;
  std::vector<int> output_shape(const std::vector<int>& in) const override;
  nlohmann::json spec() const override;
  void init(RngStream& rng);

  int in_, out_;
  Act act_;
  Tensor W, b, dW, db;

 private:
  Tensor x_, z_;
};

class Conv2d : public Layer {
 public:
  Conv2d(int in_channels, int filters, int kernel, Act act);
  Tensor forward(const Tensor& x, bool train, RngStream* rng) override;
  Tensor backward(const Tensor& grad_out) override;
  void params(const std::string& prefix, std::vector<ParamRef>& out) override;
  std::vector<int> output_shape(const std::vector<int>& in) const override;
  nlohmann::json spec() const override;
  void init(RngStream& rng);

  int in_c_, out_c_, k_;
  Act act_;
  Tensor W, b, dW, db;  // W: [out_c, in_c*k*k]

 private:
  Tensor cols_, z_;
  std::vector<int> in_shape_;
};

class MaxPool2d : public Layer {
 public:
  MaxPool2d(int kernel, int stride);
  Tensor forward(const Tensor& x, bool train, RngStream* rng) override;
  Tensor backward(const Tensor& grad_out) override;
  std::vector<int> output_shape(const std::vector<int>& in) const override;
  nlohmann::json spec() const override;

  int k_, stride_;

 private:
  std::vector<int> in_shape_;
  std::vector<int32_t> argmax_;
};

class LayerNorm : public Layer {
 public:
  explicit LayerNorm(int dim, double eps = 1e-5);
  Tensor forward(const Tensor& x, bool train, RngStream* rng) override;
  Tensor backward(const Tensor& grad_out) override;
  void params(const std::string& prefix, std::vector<ParamRef>& out) override;
  std::vector<int> output_shape(const std::vector<int>& in) const override;
  nlohmann::json spec() const override;

  int dim_;
  double eps_;
  Tensor gamma, beta, dgamma, dbeta;

 private:
  Tensor xhat_;
  std::vector<float> inv_std_;
};

class Dropout : public Layer {
 public:
  explicit Dropout(double rate);
  Tensor forward(const Tensor& x, bool train, RngStream* rng) override;
  Tensor backward(const Tensor& grad_out) override;
  std::vector<int> output_shape(const std::vector<int>& in) const override;
  nlohmann::json spec() const override;

  double rate_;

 private:
  Tensor mask_;
  bool active_ = false;
};

class Flatten : public Layer {
 public:
  Tensor forward(const Tensor& x, bool train, RngStream* rng) override;
  Tensor backward(const Tensor& grad_out) override;
  std::vector<int> output_shape(const std::vector<int>& in) const override;
  nlohmann::json spec() const override;

 private:
  std::vector<int> in_shape_;
};

// Standalone activation (for stacks where the nonlinearity does not sit
// directly after a dense layer, e.g. LayerNorm before the activation).
class Activation : public Layer {
 public:
  explicit Activation(Act act) : act_(act) {}
  Tensor forward(const Tensor& x, bool train, RngStream* rng) override;
  Tensor backward(const Tensor& grad_out) override;
  std::vector<int> output_shape(const std::vector<int>& in) const override {
    return in;
  }
  nlohmann::json spec() const override;

  Act act_;

 private:
  Tensor z_;
};

// Feed-forward stack with build-time shape validation.
class Sequential {
 public:
  Sequential() = default;
  explicit Sequential(std::vector<int> input_shape)
      : input_shape_(std::move(input_shape)) {}

  Dense& dense(int in, int out, Act act);
  Conv2d& conv2d(int in_channels, int filters, int kernel,
                 Act act = Act::Linear);
  MaxPool2d& maxpool(int kernel, int stride);
  LayerNorm& layernorm(int dim);
  Dropout& dropout(double rate);
  Flatten& flatten();
  Activation& activation(Act act);

  Tensor forward(const Tensor& x, bool train = false, RngStream* rng = nullptr);
  Tensor backward(const Tensor& grad_out);
  void params(const std::string& prefix, std::vector<ParamRef>& out);
  void init(RngStream& rng);

  const std::vector<int>& output_shape() const { return shape_; }
  nlohmann::json spec() const;
  size_t layer_count() const { return layers_.size(); }
  Layer& layer(size_t i) { return *layers_[i]; }

 private:
  void push(std::unique_ptr<Layer> l);
  std::vector<std::unique_ptr<Layer>> layers_;
  std::vector<int> input_shape_, shape_;
};

// Standard GRU cell processed stepwise; keeps a stack of step caches so a
// whole unrolled sequence can be backpropagated in reverse order.
class GruCell {
 public:
  GruCell(int in, int hidden);
  Tensor forward_step(const Tensor& x, const Tensor& h, bool keep_tape);
  // grad_h_next -> {grad_x, grad_h}; pops the most recent step cache.
  std::pair<Tensor, Tensor> backward_step(const Tensor& grad_h_next);
  void clear_tape();
  void params(const std::string& prefix, std::vector<ParamRef>& out);
  void init(RngStream& rng);
  int hidden() const { return hidden_; }
  nlohmann::json spec() const;

  int in_, hidden_;
  Tensor Wz, Wr, Wn, Uz, Ur, Un, bz, br, bn;
  Tensor dWz, dWr, dWn, dUz, dUr, dUn, dbz, dbr, dbn;

 private:
  struct StepCache {
    Tensor x, h, z, r, n, rh;
  };
  std::vector<StepCache> tape_;
};

// Build a Sequential from a JSON layer list; throws ConfigError on
// incompatible adjacent shapes.
Sequential build_sequential(const nlohmann::json& spec);

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam(std::vector<ParamRef> params, const AdamConfig& cfg = AdamConfig());
  void step();
  void zero_grad();
  void set_lr(double lr) { cfg_.lr = lr; }
  double lr() const { return cfg_.lr; }
  int64_t step_count() const { return t_; }
  const std::vector<ParamRef>& params() const { return params_; }
  // global gradient-norm clipping; returns the pre-clip norm
  double clip_grad_norm(double max_norm);

 private:
  std::vector<ParamRef> params_;
  std::vector<Tensor> m_, v_;
  AdamConfig cfg_;
  int64_t t_ = 0;
};

}  // namespace hilmares::nn
