#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

// Minimal dense layers with hand-written backward passes. Activations are
// stored column-per-sample; all parameters live in one flat vector described
// by a ParamLayout so that optimizers and checkpoints see a single buffer.
namespace gaterace::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using MatMap = Eigen::Map<Matrix>;
using ConstMatMap = Eigen::Map<const Matrix>;
// Flat parameter and gradient storage. Aligned so vectorized kernels see the
// same element alignment in every process and every copy.
using ParamVector = std::vector<double, Eigen::aligned_allocator<double>>;

struct ParamEntry {
  std::string name;
  int rows = 0;
  int cols = 0;
  std::size_t offset = 0;
  std::size_t size() const { return static_cast<std::size_t>(rows) * cols; }
};

class ParamLayout {
 public:
  std::size_t add(const std::string& name, int rows, int cols);
  std::size_t total() const { return total_; }
  const std::vector<ParamEntry>& entries() const { return entries_; }
  const ParamEntry& find(const std::string& name) const;

 private:
  std::vector<ParamEntry> entries_;
  std::size_t total_ = 0;
};

enum class Activation { kNone, kTanh, kElu };

void activate(Activation act, Matrix& x);
// Multiplies `grad` in place by the activation derivative, given the
// activation output `y`.
void activate_backward(Activation act, const Matrix& y, Matrix& grad);

class Linear {
 public:
  Linear() = default;
  Linear(ParamLayout& layout, const std::string& name, int in, int out);

  int in() const { return in_; }
  int out() const { return out_; }
  const std::string& name() const { return name_; }

  Matrix forward(const double* params, const Matrix& x) const;
  // Accumulates parameter gradients; returns dL/dx.
  Matrix backward(const double* params, double* grads, const Matrix& x,
                  const Matrix& dy, bool need_dx = true) const;

  ConstMatMap weight(const double* p) const {
    return {p + w_off_, out_, in_};
  }
  Eigen::Map<const Vector> bias(const double* p) const {
    return {p + b_off_, out_};
  }
  std::size_t weight_offset() const { return w_off_; }
  std::size_t bias_offset() const { return b_off_; }

 private:
  std::string name_;
  int in_ = 0;
  int out_ = 0;
  std::size_t w_off_ = 0;
  std::size_t b_off_ = 0;
};

// Square kernel 2-D convolution over channel-major images
// (index c * H * W + y * W + x).
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParamLayout& layout, const std::string& name, int in_channels,
         int out_channels, int in_size, int kernel, int stride, int pad);

  int out_size() const { return out_size_; }
  int out_channels() const { return out_c_; }
  int output_dim() const { return out_c_ * out_size_ * out_size_; }
  int input_dim() const { return in_c_ * in_size_ * in_size_; }
  const std::string& name() const { return name_; }

  Matrix forward(const double* params, const Matrix& x) const;
  Matrix backward(const double* params, double* grads, const Matrix& x,
                  const Matrix& dy, bool need_dx = true) const;

  std::size_t weight_offset() const { return w_off_; }
  std::size_t bias_offset() const { return b_off_; }
  int fan_in() const { return in_c_ * kernel_ * kernel_; }

 private:
  void im2col(const double* image, Matrix& cols) const;
  void col2im(const Matrix& cols, double* image) const;

  std::string name_;
  int in_c_ = 0;
  int out_c_ = 0;
  int in_size_ = 0;
  int kernel_ = 3;
  int stride_ = 2;
  int pad_ = 1;
  int out_size_ = 0;
  std::size_t w_off_ = 0;  // out_c x (in_c * k * k)
  std::size_t b_off_ = 0;
};

// Gated recurrent unit (reset, update, candidate gate order).
class GruCell {
 public:
  GruCell() = default;
  GruCell(ParamLayout& layout, const std::string& name, int in, int hidden);

  int in() const { return in_; }
  int hidden() const { return hid_; }
  const std::string& name() const { return name_; }

  struct Cache {
    int steps = 0;
    int batch = 0;
    std::vector<Matrix> h_in;  // masked hidden fed at each step
    std::vector<Matrix> r, z, n, gh_n;
  };

  // x: in x (steps * batch), column t * batch + b. keep[t * batch + b] = 0
  // zeroes the incoming hidden before step t. Returns hidden x (steps * batch).
  Matrix forward(const double* params, const Matrix& x, const Matrix& h0,
                 const Vector& keep, int steps, Cache* cache) const;
  // dh_out: gradient w.r.t. every output hidden. Returns dL/dx.
  Matrix backward(const double* params, double* grads, const Matrix& x,
                  const Cache& cache, const Vector& keep,
                  const Matrix& dh_out) const;

  std::size_t w_ih_offset() const { return w_ih_; }
  std::size_t w_hh_offset() const { return w_hh_; }
  std::size_t b_ih_offset() const { return b_ih_; }
  std::size_t b_hh_offset() const { return b_hh_; }

 private:
  std::string name_;
  int in_ = 0;
  int hid_ = 0;
  std::size_t w_ih_ = 0;  // 3H x in
  std::size_t w_hh_ = 0;  // 3H x H
  std::size_t b_ih_ = 0;
  std::size_t b_hh_ = 0;
};

// Fills a rows x cols block (column-major) with a scaled orthogonal matrix.
void orthogonal_init(double* data, int rows, int cols, double gain,
                     std::mt19937_64& rng);

}  // namespace gaterace::nn
