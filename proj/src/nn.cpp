#include "gaterace/nn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace gaterace::nn {

std::size_t ParamLayout::add(const std::string& name, int rows, int cols) {
  ParamEntry e{name, rows, cols, total_};
  total_ += e.size();
  entries_.push_back(e);
  return e.offset;
}

const ParamEntry& ParamLayout::find(const std::string& name) const {
  for (const ParamEntry& e : entries_) {
    if (e.name == name) return e;
  }
  throw std::out_of_range("no parameter named " + name);
}

void activate(Activation act, Matrix& x) {
  switch (act) {
    case Activation::kNone:
      return;
    case Activation::kTanh:
      x = x.array().tanh();
      return;
    case Activation::kElu:
      x = x.unaryExpr([](double v) { return v > 0.0 ? v : std::expm1(v); });
      return;
  }
}

void activate_backward(Activation act, const Matrix& y, Matrix& grad) {
  switch (act) {
    case Activation::kNone:
      return;
    case Activation::kTanh:
      grad.array() *= 1.0 - y.array().square();
      return;
    case Activation::kElu:
      grad.array() *=
          y.unaryExpr([](double v) { return v > 0.0 ? 1.0 : v + 1.0; }).array();
      return;
  }
}

Linear::Linear(ParamLayout& layout, const std::string& name, int in, int out)
    : name_(name), in_(in), out_(out) {
  w_off_ = layout.add(name + ".weight", out, in);
  b_off_ = layout.add(name + ".bias", out, 1);
}

Matrix Linear::forward(const double* p, const Matrix& x) const {
  if (x.rows() != in_) {
    throw std::invalid_argument(name_ + ": input has " +
                                std::to_string(x.rows()) + " rows, expected " +
                                std::to_string(in_));
  }
  Matrix y = weight(p) * x;
  y.colwise() += bias(p);
  return y;
}

Matrix Linear::backward(const double* p, double* g, const Matrix& x,
                        const Matrix& dy, bool need_dx) const {
  MatMap(g + w_off_, out_, in_).noalias() += dy * x.transpose();
  Eigen::Map<Vector>(g + b_off_, out_) += dy.rowwise().sum();
  if (!need_dx) return {};
  return weight(p).transpose() * dy;
}

Conv2d::Conv2d(ParamLayout& layout, const std::string& name, int in_channels,
               int out_channels, int in_size, int kernel, int stride, int pad)
    : name_(name),
      in_c_(in_channels),
      out_c_(out_channels),
      in_size_(in_size),
      kernel_(kernel),
      stride_(stride),
      pad_(pad) {
  out_size_ = (in_size + 2 * pad - kernel) / stride + 1;
  if (out_size_ <= 0) throw std::invalid_argument(name + ": image too small");
  w_off_ = layout.add(name + ".weight", out_c_, in_c_ * kernel_ * kernel_);
  b_off_ = layout.add(name + ".bias", out_c_, 1);
}

void Conv2d::im2col(const double* image, Matrix& cols) const {
  const int hw = out_size_ * out_size_;
  const int kk = kernel_ * kernel_;
  cols.setZero(hw, in_c_ * kk);
  for (int c = 0; c < in_c_; ++c) {
    const double* plane = image + static_cast<std::size_t>(c) * in_size_ * in_size_;
    for (int ky = 0; ky < kernel_; ++ky) {
      for (int kx = 0; kx < kernel_; ++kx) {
        const int col = c * kk + ky * kernel_ + kx;
        for (int oy = 0; oy < out_size_; ++oy) {
          const int iy = oy * stride_ + ky - pad_;
          if (iy < 0 || iy >= in_size_) continue;
          for (int ox = 0; ox < out_size_; ++ox) {
            const int ix = ox * stride_ + kx - pad_;
            if (ix < 0 || ix >= in_size_) continue;
            cols(oy * out_size_ + ox, col) = plane[iy * in_size_ + ix];
          }
        }
      }
    }
  }
}

void Conv2d::col2im(const Matrix& cols, double* image) const {
  const int kk = kernel_ * kernel_;
  for (int c = 0; c < in_c_; ++c) {
    double* plane = image + static_cast<std::size_t>(c) * in_size_ * in_size_;
    for (int ky = 0; ky < kernel_; ++ky) {
      for (int kx = 0; kx < kernel_; ++kx) {
        const int col = c * kk + ky * kernel_ + kx;
        for (int oy = 0; oy < out_size_; ++oy) {
          const int iy = oy * stride_ + ky - pad_;
          if (iy < 0 || iy >= in_size_) continue;
          for (int ox = 0; ox < out_size_; ++ox) {
            const int ix = ox * stride_ + kx - pad_;
            if (ix < 0 || ix >= in_size_) continue;
            plane[iy * in_size_ + ix] += cols(oy * out_size_ + ox, col);
          }
        }
      }
    }
  }
}

Matrix Conv2d::forward(const double* p, const Matrix& x) const {
  if (x.rows() != input_dim()) {
    throw std::invalid_argument(name_ + ": unexpected input size");
  }
  const int hw = out_size_ * out_size_;
  const ConstMatMap w(p + w_off_, out_c_, in_c_ * kernel_ * kernel_);
  const Eigen::Map<const Vector> b(p + b_off_, out_c_);
  Matrix y(output_dim(), x.cols());
  Matrix cols;
  for (Eigen::Index s = 0; s < x.cols(); ++s) {
    im2col(x.col(s).data(), cols);
    MatMap out(y.col(s).data(), hw, out_c_);
    out.noalias() = cols * w.transpose();
    out.rowwise() += b.transpose();
  }
  return y;
}

Matrix Conv2d::backward(const double* p, double* g, const Matrix& x,
                        const Matrix& dy, bool need_dx) const {
  const int hw = out_size_ * out_size_;
  const int ckk = in_c_ * kernel_ * kernel_;
  const ConstMatMap w(p + w_off_, out_c_, ckk);
  MatMap gw(g + w_off_, out_c_, ckk);
  Eigen::Map<Vector> gb(g + b_off_, out_c_);
  Matrix dx;
  if (need_dx) dx.setZero(input_dim(), x.cols());
  Matrix cols;
  Matrix dcols;
  for (Eigen::Index s = 0; s < x.cols(); ++s) {
    im2col(x.col(s).data(), cols);
    const ConstMatMap d(dy.col(s).data(), hw, out_c_);
    gw.noalias() += d.transpose() * cols;
    gb += d.colwise().sum().transpose();
    if (need_dx) {
      dcols.noalias() = d * w;
      col2im(dcols, dx.col(s).data());
    }
  }
  return dx;
}

GruCell::GruCell(ParamLayout& layout, const std::string& name, int in,
                 int hidden)
    : name_(name), in_(in), hid_(hidden) {
  w_ih_ = layout.add(name + ".weight_ih", 3 * hidden, in);
  w_hh_ = layout.add(name + ".weight_hh", 3 * hidden, hidden);
  b_ih_ = layout.add(name + ".bias_ih", 3 * hidden, 1);
  b_hh_ = layout.add(name + ".bias_hh", 3 * hidden, 1);
}

namespace {

Matrix sigmoid(const Matrix& x) {
  return (1.0 + (-x.array()).exp()).inverse().matrix();
}

}  // namespace

Matrix GruCell::forward(const double* p, const Matrix& x, const Matrix& h0,
                        const Vector& keep, int steps, Cache* cache) const {
  const int H = hid_;
  const int B = static_cast<int>(h0.cols());
  if (x.rows() != in_ || x.cols() != static_cast<Eigen::Index>(steps) * B ||
      h0.rows() != H || keep.size() != x.cols()) {
    throw std::invalid_argument(name_ + ": inconsistent sequence shapes");
  }
  const ConstMatMap w_ih(p + w_ih_, 3 * H, in_);
  const ConstMatMap w_hh(p + w_hh_, 3 * H, H);
  const Eigen::Map<const Vector> b_ih(p + b_ih_, 3 * H);
  const Eigen::Map<const Vector> b_hh(p + b_hh_, 3 * H);

  Matrix gi = w_ih * x;
  gi.colwise() += b_ih;

  if (cache) {
    cache->steps = steps;
    cache->batch = B;
    cache->h_in.resize(steps);
    cache->r.resize(steps);
    cache->z.resize(steps);
    cache->n.resize(steps);
    cache->gh_n.resize(steps);
  }
  Matrix out(H, static_cast<Eigen::Index>(steps) * B);
  Matrix h = h0;
  for (int t = 0; t < steps; ++t) {
    const Eigen::Index c0 = static_cast<Eigen::Index>(t) * B;
    Matrix h_in = h * keep.segment(c0, B).asDiagonal();
    Matrix gh = w_hh * h_in;
    gh.colwise() += b_hh;
    const auto git = gi.middleCols(c0, B);
    Matrix r = sigmoid(git.topRows(H) + gh.topRows(H));
    Matrix z = sigmoid(git.middleRows(H, H) + gh.middleRows(H, H));
    Matrix gh_n = gh.bottomRows(H);
    Matrix n = (git.bottomRows(H).array() + r.array() * gh_n.array()).tanh();
    h = ((1.0 - z.array()) * n.array() + z.array() * h_in.array()).matrix();
    out.middleCols(c0, B) = h;
    if (cache) {
      cache->h_in[t] = std::move(h_in);
      cache->r[t] = std::move(r);
      cache->z[t] = std::move(z);
      cache->n[t] = std::move(n);
      cache->gh_n[t] = std::move(gh_n);
    }
  }
  return out;
}

Matrix GruCell::backward(const double* p, double* g, const Matrix& x,
                         const Cache& cache, const Vector& keep,
                         const Matrix& dh_out) const {
  const int H = hid_;
  const int B = cache.batch;
  const int T = cache.steps;
  const ConstMatMap w_ih(p + w_ih_, 3 * H, in_);
  const ConstMatMap w_hh(p + w_hh_, 3 * H, H);
  MatMap gw_ih(g + w_ih_, 3 * H, in_);
  MatMap gw_hh(g + w_hh_, 3 * H, H);
  Eigen::Map<Vector> gb_ih(g + b_ih_, 3 * H);
  Eigen::Map<Vector> gb_hh(g + b_hh_, 3 * H);

  Matrix dgi(3 * H, static_cast<Eigen::Index>(T) * B);
  Matrix dh_next = Matrix::Zero(H, B);
  Matrix dgh(3 * H, B);
  for (int t = T - 1; t >= 0; --t) {
    const Eigen::Index c0 = static_cast<Eigen::Index>(t) * B;
    const Matrix dh = dh_out.middleCols(c0, B) + dh_next;
    const auto& r = cache.r[t].array();
    const auto& z = cache.z[t].array();
    const auto& n = cache.n[t].array();
    const auto& h_in = cache.h_in[t].array();

    const Eigen::ArrayXXd dn_pre = dh.array() * (1.0 - z) * (1.0 - n.square());
    const Eigen::ArrayXXd dz_pre = dh.array() * (h_in - n) * z * (1.0 - z);
    const Eigen::ArrayXXd dr_pre =
        dn_pre * cache.gh_n[t].array() * r * (1.0 - r);

    dgh.topRows(H) = dr_pre.matrix();
    dgh.middleRows(H, H) = dz_pre.matrix();
    dgh.bottomRows(H) = (dn_pre * r).matrix();
    auto dgi_t = dgi.middleCols(c0, B);
    dgi_t.topRows(H) = dr_pre.matrix();
    dgi_t.middleRows(H, H) = dz_pre.matrix();
    dgi_t.bottomRows(H) = dn_pre.matrix();

    gw_hh.noalias() += dgh * cache.h_in[t].transpose();
    gb_hh += dgh.rowwise().sum();
    Matrix dh_in = (dh.array() * z).matrix();
    dh_in.noalias() += w_hh.transpose() * dgh;
    dh_next = dh_in * keep.segment(c0, B).asDiagonal();
  }
  gw_ih.noalias() += dgi * x.transpose();
  gb_ih += dgi.rowwise().sum();
  return w_ih.transpose() * dgi;
}

void orthogonal_init(double* data, int rows, int cols, double gain,
                     std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const int big = std::max(rows, cols);
  const int small = std::min(rows, cols);
  Matrix a(big, small);
  for (Eigen::Index j = 0; j < a.cols(); ++j) {
    for (Eigen::Index i = 0; i < a.rows(); ++i) a(i, j) = normal(rng);
  }
  Eigen::HouseholderQR<Matrix> qr(a);
  Matrix q = qr.householderQ() * Matrix::Identity(big, small);
  const Matrix r = qr.matrixQR().topRows(small).triangularView<Eigen::Upper>();
  for (int j = 0; j < small; ++j) {
    if (r(j, j) < 0.0) q.col(j) *= -1.0;
  }
  MatMap w(data, rows, cols);
  if (rows >= cols) {
    w = gain * q;
  } else {
    w = gain * q.transpose();
  }
}

}  // namespace gaterace::nn
