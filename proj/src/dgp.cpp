#include "dego/dgp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include <ceres/gradient_problem.h>
#include <ceres/gradient_problem_solver.h>

#include "dego/optimizers.hpp"

namespace dego {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

struct Bounds {
  double lo;
  double hi;
};

constexpr Bounds kVarianceBounds{1e-2, 1e2};
constexpr Bounds kRateBounds{1e-3, 1e4};
constexpr Bounds kNoiseBounds{1e-8, 1.0};
constexpr Bounds kQVarBounds{1e-8, 10.0};

double sigmoid(double u) { return 1.0 / (1.0 + std::exp(-u)); }

// p = exp(log lo + (log hi - log lo) * sigmoid(u))
double to_positive(double u, Bounds b) {
  const double a = std::log(b.lo);
  return std::exp(a + (std::log(b.hi) - a) * sigmoid(u));
}

double from_positive(double p, Bounds b) {
  const double a = std::log(b.lo);
  double frac = (std::log(std::clamp(p, b.lo, b.hi)) - a) / (std::log(b.hi) - a);
  frac = std::clamp(frac, 1e-9, 1.0 - 1e-9);
  return std::log(frac / (1.0 - frac));
}

// d p / d u
double positive_slope(double u, double p, Bounds b) {
  const double s = sigmoid(u);
  return p * (std::log(b.hi) - std::log(b.lo)) * s * (1.0 - s);
}

bool all_zero(const Matrix& m) { return m.size() == 0 || (m.array() == 0.0).all(); }

Matrix psi1_matrix(const ArdSqExpKernel& k, const Matrix& z, const Matrix& mu, const Matrix& s,
                   bool deterministic) {
  const Eigen::Index n = mu.rows();
  const Eigen::Index m = z.rows();
  const Eigen::Index q = z.cols();
  Matrix psi1(n, m);
  Vector inv_a(q);
  for (Eigen::Index i = 0; i < n; ++i) {
    double half_logdet = 0.0;
    for (Eigen::Index d = 0; d < q; ++d) {
      const double a = deterministic ? 1.0 : 1.0 + 2.0 * k.rates[d] * s(i, d);
      inv_a[d] = 1.0 / a;
      half_logdet -= 0.5 * std::log(a);
    }
    for (Eigen::Index j = 0; j < m; ++j) {
      double acc = 0.0;
      for (Eigen::Index d = 0; d < q; ++d) {
        const double diff = mu(i, d) - z(j, d);
        acc += k.rates[d] * diff * diff * inv_a[d];
      }
      psi1(i, j) = k.variance * std::exp(half_logdet - acc);
    }
  }
  return psi1;
}

// Pairwise inducing quantities shared by every data point: sum_q rate_q dz^2 / 2 and midpoints.
struct InducingPairs {
  Matrix half_sq;             // M x M
  std::vector<double> mid;    // (m * M + m') * Q + q

  InducingPairs(const ArdSqExpKernel& k, const Matrix& z) {
    const Eigen::Index m = z.rows();
    const Eigen::Index q = z.cols();
    half_sq.resize(m, m);
    mid.resize(static_cast<std::size_t>(m * m * q));
    for (Eigen::Index a = 0; a < m; ++a) {
      for (Eigen::Index b = 0; b < m; ++b) {
        double acc = 0.0;
        for (Eigen::Index d = 0; d < q; ++d) {
          const double dz = z(a, d) - z(b, d);
          acc += 0.5 * k.rates[d] * dz * dz;
          mid[static_cast<std::size_t>((a * m + b) * q + d)] = 0.5 * (z(a, d) + z(b, d));
        }
        half_sq(a, b) = acc;
      }
    }
  }
};

Matrix psi2_uncertain(const ArdSqExpKernel& k, const Matrix& z, const Matrix& mu, const Matrix& s) {
  const Eigen::Index n = mu.rows();
  const Eigen::Index m = z.rows();
  const Eigen::Index q = z.cols();
  const InducingPairs pairs(k, z);
  const double v2 = k.variance * k.variance;
  Matrix psi2 = Matrix::Zero(m, m);
  Vector w(q);
  for (Eigen::Index i = 0; i < n; ++i) {
    double half_logdet = 0.0;
    for (Eigen::Index d = 0; d < q; ++d) {
      const double b = 1.0 + 4.0 * k.rates[d] * s(i, d);
      w[d] = 2.0 * k.rates[d] / b;
      half_logdet -= 0.5 * std::log(b);
    }
    for (Eigen::Index a = 0; a < m; ++a) {
      for (Eigen::Index b = a; b < m; ++b) {
        const double* zbar = &pairs.mid[static_cast<std::size_t>((a * m + b) * q)];
        double acc = pairs.half_sq(a, b);
        for (Eigen::Index d = 0; d < q; ++d) {
          const double e = mu(i, d) - zbar[d];
          acc += w[d] * e * e;
        }
        psi2(a, b) += v2 * std::exp(half_logdet - acc);
      }
    }
  }
  psi2.triangularView<Eigen::StrictlyLower>() = psi2.transpose();
  return psi2;
}

struct PsiGradientSink {
  double variance = 0.0;
  Vector rates;
  Matrix inducing;
  Matrix in_mean;
  Matrix in_var;
  bool want_inputs = false;
};

// Accumulates d F / d (variance, rates, Z, mu, S) given d F / d (psi0, psi1, psi2).
void psi_backprop(const ArdSqExpKernel& k, const Matrix& z, const Matrix& mu, const Matrix& s,
                  bool deterministic, const PsiStats& psi, double g0, Matrix g1, const Matrix& g2,
                  PsiGradientSink& out) {
  const Eigen::Index n = mu.rows();
  const Eigen::Index m = z.rows();
  const Eigen::Index q = z.cols();
  const double v = k.variance;

  out.variance += g0 * static_cast<double>(n);

  if (deterministic) {
    // psi2 = psi1^T psi1
    g1 += 2.0 * psi.psi1 * g2;
  }

  Vector inv_a(q);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index d = 0; d < q; ++d) {
      inv_a[d] = deterministic ? 1.0 : 1.0 / (1.0 + 2.0 * k.rates[d] * s(i, d));
    }
    for (Eigen::Index j = 0; j < m; ++j) {
      const double w = g1(i, j) * psi.psi1(i, j);
      if (w == 0.0) continue;
      out.variance += w / v;
      for (Eigen::Index d = 0; d < q; ++d) {
        const double th = k.rates[d];
        const double diff = mu(i, d) - z(j, d);
        const double t = 2.0 * th * diff * inv_a[d];
        out.inducing(j, d) += w * t;
        const double sv = deterministic ? 0.0 : s(i, d);
        out.rates[d] += w * (-sv * inv_a[d] - diff * diff * inv_a[d] * inv_a[d]);
        if (out.want_inputs) {
          out.in_mean(i, d) -= w * t;
          out.in_var(i, d) +=
              w * (-th * inv_a[d] + 2.0 * th * th * diff * diff * inv_a[d] * inv_a[d]);
        }
      }
    }
  }

  if (deterministic) return;

  const InducingPairs pairs(k, z);
  const double v2 = v * v;
  Vector inv_b(q);
  for (Eigen::Index i = 0; i < n; ++i) {
    double half_logdet = 0.0;
    for (Eigen::Index d = 0; d < q; ++d) {
      const double b = 1.0 + 4.0 * k.rates[d] * s(i, d);
      inv_b[d] = 1.0 / b;
      half_logdet -= 0.5 * std::log(b);
    }
    for (Eigen::Index a = 0; a < m; ++a) {
      for (Eigen::Index b = a; b < m; ++b) {
        const double* zbar = &pairs.mid[static_cast<std::size_t>((a * m + b) * q)];
        double acc = pairs.half_sq(a, b);
        for (Eigen::Index d = 0; d < q; ++d) {
          const double e = mu(i, d) - zbar[d];
          acc += 2.0 * k.rates[d] * inv_b[d] * e * e;
        }
        const double value = v2 * std::exp(half_logdet - acc);
        const double w = (a == b ? 1.0 : 2.0) * g2(a, b) * value;
        if (w == 0.0) continue;
        out.variance += 2.0 * w / v;
        for (Eigen::Index d = 0; d < q; ++d) {
          const double th = k.rates[d];
          const double e = mu(i, d) - zbar[d];
          const double dz = z(a, d) - z(b, d);
          const double ib = inv_b[d];
          out.rates[d] += w * (-2.0 * s(i, d) * ib - 0.5 * dz * dz - 2.0 * e * e * ib * ib);
          const double pull = 2.0 * th * e * ib;
          out.inducing(a, d) += w * (-th * dz + pull);
          out.inducing(b, d) += w * (th * dz + pull);
          if (out.want_inputs) {
            out.in_mean(i, d) -= w * 2.0 * pull;
            out.in_var(i, d) += w * (-2.0 * th * ib + 8.0 * th * th * e * e * ib * ib);
          }
        }
      }
    }
  }
}

// d F / d K_MM chained onto variance, rates and Z.
void kmm_backprop(const ArdSqExpKernel& k, const Matrix& z, const Matrix& kmm, const Matrix& gk,
                  PsiGradientSink& out) {
  const Eigen::Index m = z.rows();
  const Eigen::Index q = z.cols();
  for (Eigen::Index a = 0; a < m; ++a) {
    for (Eigen::Index b = 0; b < m; ++b) {
      const double w = gk(a, b) * kmm(a, b);
      out.variance += w / k.variance;
      for (Eigen::Index d = 0; d < q; ++d) {
        const double dz = z(a, d) - z(b, d);
        out.rates[d] -= w * dz * dz;
        out.inducing(a, d) -= 2.0 * k.rates[d] * dz * w;
        out.inducing(b, d) += 2.0 * k.rates[d] * dz * w;
      }
    }
  }
}

// Everything the collapsed bound and the optimal q(u) need.
struct LayerSystem {
  PsiStats psi;
  Matrix kmm;
  SpdFactor kmm_factor;
  SpdFactor a_factor;  // A = I + beta L^-1 psi2 L^-T
  Matrix psi1t_y;      // M x D
  double beta = 0.0;
  bool deterministic = false;
};

LayerSystem solve_layer(const ArdSqExpKernel& kernel, const Matrix& z, const Matrix& in_mean,
                        const Matrix& in_var, const Matrix& out_mean, double noise,
                        double jitter = kInducingJitter) {
  LayerSystem sys;
  sys.deterministic = all_zero(in_var);
  sys.psi.psi0 = static_cast<double>(in_mean.rows()) * kernel.variance;
  sys.psi.psi1 = psi1_matrix(kernel, z, in_mean, in_var, sys.deterministic);
  sys.psi.psi2 = sys.deterministic ? Matrix(sys.psi.psi1.transpose() * sys.psi.psi1)
                                   : psi2_uncertain(kernel, z, in_mean, in_var);
  sys.kmm = gram(kernel, z);
  sys.kmm.diagonal().array() += jitter * kernel.variance;
  sys.kmm_factor = cholesky(sys.kmm);
  sys.beta = 1.0 / noise;
  const Matrix half = sys.kmm_factor.solve_lower(sys.psi.psi2);
  Matrix a = sys.kmm_factor.solve_lower(half.transpose());
  a = (0.5 * sys.beta * (a + a.transpose())).eval();
  a.diagonal().array() += 1.0;
  sys.a_factor = cholesky(a);
  sys.psi1t_y = sys.psi.psi1.transpose() * out_mean;
  return sys;
}

Matrix w_inverse(const LayerSystem& sys) {
  const Eigen::Index m = sys.kmm.rows();
  const Matrix l_inv = sys.kmm_factor.solve_lower(Matrix::Identity(m, m));
  return l_inv.transpose() * sys.a_factor.inverse() * l_inv;
}

double entropy(const Matrix& var) {
  const double c = 0.5 * (std::log(2.0 * std::numbers::pi) + 1.0);
  return static_cast<double>(var.size()) * c + 0.5 * var.array().log().sum();
}

struct InputView {
  const Matrix* mean;
  const Matrix* var;
};

InputView layer_input(const DgpModel& model, std::size_t l, const Matrix& empty) {
  if (l == 0) return {&model.data.x, &empty};
  return {&model.layers[l - 1].out_mean, &model.layers[l - 1].out_var};
}

}  // namespace

PsiStats psi_statistics(const ArdSqExpKernel& kernel, const Matrix& inducing,
                        const Matrix& q_mean, const Matrix& q_var) {
  if (inducing.cols() != kernel.dim() || q_mean.cols() != kernel.dim()) {
    throw DimensionMismatch("psi_statistics: input dimension");
  }
  if (q_var.size() != 0 && (q_var.rows() != q_mean.rows() || q_var.cols() != q_mean.cols())) {
    throw DimensionMismatch("psi_statistics: variance shape");
  }
  const bool det = all_zero(q_var);
  PsiStats ps;
  ps.psi0 = static_cast<double>(q_mean.rows()) * kernel.variance;
  ps.psi1 = psi1_matrix(kernel, inducing, q_mean, q_var, det);
  ps.psi2 = det ? Matrix(ps.psi1.transpose() * ps.psi1)
                : psi2_uncertain(kernel, inducing, q_mean, q_var);
  return ps;
}

double sparse_layer_bound(const ArdSqExpKernel& kernel, const Matrix& inducing,
                          const Matrix& in_mean, const Matrix& in_var, const Matrix& out_mean,
                          const Matrix& out_var, double noise, LayerBoundGradient* gradient,
                          double inducing_jitter) {
  if (out_mean.rows() != in_mean.rows()) throw DimensionMismatch("sparse_layer_bound: N");
  if (out_var.size() != 0 &&
      (out_var.rows() != out_mean.rows() || out_var.cols() != out_mean.cols())) {
    throw DimensionMismatch("sparse_layer_bound: output variance shape");
  }
  if (inducing.cols() != kernel.dim() || in_mean.cols() != kernel.dim()) {
    throw DimensionMismatch("sparse_layer_bound: input dimension");
  }
  if (inducing_jitter < 0.0) throw std::invalid_argument("sparse_layer_bound: negative jitter");
  const LayerSystem sys =
      solve_layer(kernel, inducing, in_mean, in_var, out_mean, noise, inducing_jitter);
  const double n = static_cast<double>(in_mean.rows());
  const double d = static_cast<double>(out_mean.cols());
  const double beta = sys.beta;

  const Matrix p = sys.kmm_factor.solve_lower(sys.psi1t_y);
  const Matrix c = sys.a_factor.solve_lower(p);
  const Matrix half = sys.kmm_factor.solve_lower(sys.psi.psi2);
  const double tr_kinv_psi2 = sys.kmm_factor.solve_lower(half.transpose()).trace();
  const double yy = out_mean.squaredNorm();
  const double tr_s = out_var.sum();
  const double cc = c.squaredNorm();

  const double bound = -0.5 * n * d * std::log(2.0 * std::numbers::pi) +
                       0.5 * n * d * std::log(beta) - 0.5 * d * sys.a_factor.log_det() -
                       0.5 * beta * (yy + tr_s) + 0.5 * beta * beta * cc -
                       0.5 * d * beta * sys.psi.psi0 + 0.5 * d * beta * tr_kinv_psi2;

  if (gradient == nullptr) return bound;

  const Eigen::Index m = inducing.rows();
  const Eigen::Index q = inducing.cols();
  const Matrix k_inv = sys.kmm_factor.inverse();
  const Matrix w_inv = w_inverse(sys);
  const Matrix b = w_inv * sys.psi1t_y;  // M x D
  const Matrix bbt = b * b.transpose();

  const double g0 = -0.5 * d * beta;
  const Matrix g1 = beta * beta * out_mean * b.transpose();
  const Matrix g2 = -0.5 * d * beta * w_inv - 0.5 * beta * beta * beta * bbt + 0.5 * d * beta * k_inv;
  const Matrix gk = -0.5 * d * w_inv + 0.5 * d * k_inv - 0.5 * beta * beta * bbt -
                    0.5 * d * beta * k_inv * sys.psi.psi2 * k_inv;
  const double d_beta = 0.5 * n * d / beta - 0.5 * (yy + tr_s) + beta * cc -
                        0.5 * d * sys.psi.psi0 + 0.5 * d * tr_kinv_psi2 +
                        ((-0.5 * d * w_inv - 0.5 * beta * beta * bbt).cwiseProduct(sys.psi.psi2)).sum();

  PsiGradientSink sink;
  sink.rates = Vector::Zero(q);
  sink.inducing = Matrix::Zero(m, q);
  sink.want_inputs = !sys.deterministic;
  if (sink.want_inputs) {
    sink.in_mean = Matrix::Zero(in_mean.rows(), q);
    sink.in_var = Matrix::Zero(in_mean.rows(), q);
  }
  psi_backprop(kernel, inducing, in_mean, in_var, sys.deterministic, sys.psi, g0, g1, g2, sink);
  kmm_backprop(kernel, inducing, sys.kmm, gk, sink);

  gradient->variance = sink.variance;
  gradient->rates = sink.rates;
  gradient->noise = -beta * beta * d_beta;
  gradient->inducing = sink.inducing;
  gradient->in_mean = sink.want_inputs ? sink.in_mean : Matrix::Zero(in_mean.rows(), q);
  gradient->in_var = sink.want_inputs ? sink.in_var : Matrix::Zero(in_mean.rows(), q);
  gradient->out_mean = -beta * out_mean + beta * beta * sys.psi.psi1 * b;
  gradient->out_var = Matrix::Constant(out_mean.rows(), out_mean.cols(), -0.5 * beta);
  return bound;
}

int inducing_schedule(const InducingSchedule& schedule, int dataset_size) {
  if (schedule.mode == InducingMode::dynamic) return dataset_size;
  if (schedule.count < 1) throw std::invalid_argument("inducing_schedule: fixed count must be >= 1");
  return schedule.count;
}

Matrix DgpModel::targets() const {
  return ((data.y.array() - y_shift) / y_scale).matrix();
}

int DgpModel::parameter_count() const { return DgpParameterMap(*this).size(); }

double elbo(const DgpModel& model) {
  const Matrix empty;
  const Matrix y = model.targets();
  double total = 0.0;
  try {
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
      const DgpLayer& layer = model.layers[l];
      const InputView in = layer_input(model, l, empty);
      if (layer.hidden()) {
        total += sparse_layer_bound(layer.kernel, layer.inducing, *in.mean, *in.var,
                                    layer.out_mean, layer.out_var, layer.noise);
        total += entropy(layer.out_var);
      } else {
        total += sparse_layer_bound(layer.kernel, layer.inducing, *in.mean, *in.var, y, empty,
                                    layer.noise);
      }
    }
  } catch (const NotPositiveDefinite&) {
    return kNegInf;
  }
  return std::isfinite(total) ? total : kNegInf;
}

// ---------------------------------------------------------------------------
// Parameter map

DgpParameterMap::DgpParameterMap(const DgpModel& shape) {
  auto push = [&](Slot slot, Eigen::Index count) { slots_.insert(slots_.end(), count, slot); };
  for (const DgpLayer& layer : shape.layers) {
    push(Slot::kernel, 1 + layer.input_dim());
    push(Slot::noise, 1);
    push(Slot::inducing, layer.inducing.size());
    if (layer.hidden()) {
      push(Slot::q_mean, layer.out_mean.size());
      push(Slot::q_var, layer.out_var.size());
    }
  }
  size_ = static_cast<int>(slots_.size());
}

Vector DgpParameterMap::pack(const DgpModel& model) const {
  Vector u(size_);
  int k = 0;
  for (const DgpLayer& layer : model.layers) {
    u[k++] = from_positive(layer.kernel.variance, kVarianceBounds);
    for (int d = 0; d < layer.input_dim(); ++d) u[k++] = from_positive(layer.kernel.rates[d], kRateBounds);
    u[k++] = from_positive(layer.noise, kNoiseBounds);
    for (Eigen::Index i = 0; i < layer.inducing.size(); ++i) u[k++] = layer.inducing.data()[i];
    if (layer.hidden()) {
      for (Eigen::Index i = 0; i < layer.out_mean.size(); ++i) u[k++] = layer.out_mean.data()[i];
      for (Eigen::Index i = 0; i < layer.out_var.size(); ++i) {
        u[k++] = from_positive(layer.out_var.data()[i], kQVarBounds);
      }
    }
  }
  return u;
}

void DgpParameterMap::unpack(const Vector& u, DgpModel& model) const {
  if (u.size() != size_) throw DimensionMismatch("DgpParameterMap: vector size");
  int k = 0;
  for (DgpLayer& layer : model.layers) {
    layer.kernel.variance = to_positive(u[k++], kVarianceBounds);
    for (int d = 0; d < layer.input_dim(); ++d) layer.kernel.rates[d] = to_positive(u[k++], kRateBounds);
    layer.noise = to_positive(u[k++], kNoiseBounds);
    for (Eigen::Index i = 0; i < layer.inducing.size(); ++i) layer.inducing.data()[i] = u[k++];
    if (layer.hidden()) {
      for (Eigen::Index i = 0; i < layer.out_mean.size(); ++i) layer.out_mean.data()[i] = u[k++];
      for (Eigen::Index i = 0; i < layer.out_var.size(); ++i) {
        layer.out_var.data()[i] = to_positive(u[k++], kQVarBounds);
      }
    }
  }
}

double DgpParameterMap::elbo_and_gradient(const Vector& u, DgpModel& scratch, Vector& grad) const {
  unpack(u, scratch);
  const Matrix empty;
  const Matrix y = scratch.targets();
  const std::size_t layers = scratch.layers.size();
  std::vector<LayerBoundGradient> g(layers);
  double total = 0.0;
  for (std::size_t l = 0; l < layers; ++l) {
    const DgpLayer& layer = scratch.layers[l];
    const InputView in = layer_input(scratch, l, empty);
    if (layer.hidden()) {
      total += sparse_layer_bound(layer.kernel, layer.inducing, *in.mean, *in.var, layer.out_mean,
                                  layer.out_var, layer.noise, &g[l]);
      total += entropy(layer.out_var);
    } else {
      total += sparse_layer_bound(layer.kernel, layer.inducing, *in.mean, *in.var, y, empty,
                                  layer.noise, &g[l]);
    }
  }

  grad.resize(size_);
  int k = 0;
  for (std::size_t l = 0; l < layers; ++l) {
    const DgpLayer& layer = scratch.layers[l];
    grad[k] = g[l].variance * positive_slope(u[k], layer.kernel.variance, kVarianceBounds);
    ++k;
    for (int d = 0; d < layer.input_dim(); ++d, ++k) {
      grad[k] = g[l].rates[d] * positive_slope(u[k], layer.kernel.rates[d], kRateBounds);
    }
    grad[k] = g[l].noise * positive_slope(u[k], layer.noise, kNoiseBounds);
    ++k;
    for (Eigen::Index i = 0; i < layer.inducing.size(); ++i) grad[k++] = g[l].inducing.data()[i];
    if (layer.hidden()) {
      const Matrix d_mean = g[l].out_mean + g[l + 1].in_mean;
      const Matrix d_var = g[l].out_var + g[l + 1].in_var +
                           (0.5 * layer.out_var.array().inverse()).matrix();
      for (Eigen::Index i = 0; i < d_mean.size(); ++i) grad[k++] = d_mean.data()[i];
      for (Eigen::Index i = 0; i < d_var.size(); ++i, ++k) {
        grad[k] = d_var.data()[i] * positive_slope(u[k], layer.out_var.data()[i], kQVarBounds);
      }
    }
  }
  return total;
}

void DgpParameterMap::box(const Vector& u, Vector& lower, Vector& upper) const {
  lower.resize(size_);
  upper.resize(size_);
  for (int i = 0; i < size_; ++i) {
    const bool free = slots_[static_cast<std::size_t>(i)] == Slot::inducing ||
                      slots_[static_cast<std::size_t>(i)] == Slot::q_mean;
    const double half = free ? 1.0 : 6.0;
    lower[i] = std::min(u[i] - half, free ? -1.0 : -6.0);
    upper[i] = std::max(u[i] + half, free ? 2.0 : 6.0);
  }
}

// ---------------------------------------------------------------------------
// Initialization and training

namespace {

Matrix tile_columns(const Matrix& x, int width, Rng& rng, double jitter) {
  Matrix out(x.rows(), width);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (int j = 0; j < width; ++j) out(i, j) = x(i, j % x.cols()) + jitter * rng.normal();
  }
  return out;
}

Matrix pick_inducing(const Matrix& source, int m, Rng& rng) {
  const auto n = static_cast<std::size_t>(source.rows());
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.index(i)]);
  Matrix z(m, source.cols());
  for (int r = 0; r < m; ++r) {
    if (static_cast<std::size_t>(r) < n) {
      z.row(r) = source.row(static_cast<Eigen::Index>(idx[r]));
    } else {
      z.row(r) = source.row(static_cast<Eigen::Index>(rng.index(n)));
      for (Eigen::Index d = 0; d < z.cols(); ++d) z(r, d) += 1e-3 * rng.normal();
    }
  }
  return z;
}

void check_config(const DgpConfig& config) {
  for (int w : config.hidden_widths) {
    if (w < 1) throw std::invalid_argument("DgpConfig: hidden widths must be >= 1");
  }
}

// Copies the parameters of `prev` into `model` (fitted to a superset of prev's data).
bool transfer_warm_start(const DgpModel& prev, DgpModel& model, Rng& rng) {
  if (prev.layers.size() != model.layers.size()) return false;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    if (prev.layers[l].input_dim() != model.layers[l].input_dim() ||
        prev.layers[l].out_mean.cols() != model.layers[l].out_mean.cols()) {
      return false;
    }
  }
  const Eigen::Index n = model.data.x.rows();
  const Eigen::Index n_prev = prev.data.x.rows();
  std::vector<Eigen::Index> nearest(static_cast<std::size_t>(n));
  std::vector<bool> exact(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Index best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < n_prev; ++j) {
      const double dist = (model.data.x.row(i) - prev.data.x.row(j)).squaredNorm();
      if (dist < best_d) {
        best_d = dist;
        best = j;
      }
    }
    nearest[static_cast<std::size_t>(i)] = best;
    exact[static_cast<std::size_t>(i)] = best_d == 0.0;
  }

  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    DgpLayer& layer = model.layers[l];
    const DgpLayer& old = prev.layers[l];
    layer.kernel = old.kernel;
    layer.noise = old.noise;
    if (layer.hidden()) {
      for (Eigen::Index i = 0; i < n; ++i) {
        const Eigen::Index j = nearest[static_cast<std::size_t>(i)];
        layer.out_mean.row(i) = old.out_mean.row(j);
        layer.out_var.row(i) = old.out_var.row(j);
      }
    }
  }

  // Inducing inputs: keep the old ones, top up from the inputs of the new points.
  const Matrix empty;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    DgpLayer& layer = model.layers[l];
    const DgpLayer& old = prev.layers[l];
    const Eigen::Index m = layer.inducing.rows();
    const Eigen::Index keep = std::min(m, old.inducing.rows());
    layer.inducing.topRows(keep) = old.inducing.topRows(keep);
    const Matrix& inputs = *layer_input(model, l, empty).mean;
    Eigen::Index r = keep;
    for (Eigen::Index i = 0; i < n && r < m; ++i) {
      if (exact[static_cast<std::size_t>(i)]) continue;
      layer.inducing.row(r) = inputs.row(i);
      if (l > 0) {
        for (Eigen::Index d = 0; d < layer.inducing.cols(); ++d) layer.inducing(r, d) += 1e-3 * rng.normal();
      }
      ++r;
    }
    for (; r < m; ++r) {
      layer.inducing.row(r) = inputs.row(static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(n))));
      for (Eigen::Index d = 0; d < layer.inducing.cols(); ++d) layer.inducing(r, d) += 1e-3 * rng.normal();
    }
  }
  return true;
}

class NegativeElbo final : public ceres::FirstOrderFunction {
 public:
  NegativeElbo(const DgpParameterMap& map, DgpModel scratch, Vector mask, double scale)
      : map_(map), scratch_(std::move(scratch)), mask_(std::move(mask)), scale_(scale) {}

  bool Evaluate(const double* parameters, double* cost, double* gradient) const override {
    const Vector u = Eigen::Map<const Vector>(parameters, map_.size());
    try {
      double value;
      if (gradient != nullptr) {
        value = map_.elbo_and_gradient(u, scratch_, grad_);
        if (!grad_.allFinite()) return false;
        Eigen::Map<Vector>(gradient, map_.size()) = -grad_.cwiseProduct(mask_) / scale_;
      } else {
        map_.unpack(u, scratch_);
        value = elbo(scratch_);
      }
      if (!std::isfinite(value)) return false;
      *cost = -value / scale_;
      return true;
    } catch (const NotPositiveDefinite&) {
      return false;
    }
  }

  int NumParameters() const override { return map_.size(); }

 private:
  const DgpParameterMap& map_;
  mutable DgpModel scratch_;
  Vector mask_;
  double scale_;
  mutable Vector grad_;
};

// One L-BFGS stage; the objective is scaled so the first step moves no coordinate by more than 1.
double lbfgs_stage(const DgpParameterMap& map, const DgpModel& shape, const Vector& mask,
                   int iterations, Vector& u) {
  DgpModel scratch = shape;
  Vector g;
  double start_value;
  try {
    start_value = map.elbo_and_gradient(u, scratch, g);
  } catch (const NotPositiveDefinite&) {
    return kNegInf;
  }
  if (!std::isfinite(start_value) || !g.allFinite()) return kNegInf;
  const double scale = std::max(1.0, g.cwiseProduct(mask).cwiseAbs().maxCoeff());

  ceres::GradientProblem problem(new NegativeElbo(map, shape, mask, scale));
  ceres::GradientProblemSolver::Options options;
  options.line_search_direction_type = ceres::LBFGS;
  options.max_num_iterations = iterations;
  options.function_tolerance = 1e-11;
  options.gradient_tolerance = 1e-12;
  options.parameter_tolerance = 1e-12;
  options.logging_type = ceres::SILENT;
  ceres::GradientProblemSolver::Summary summary;
  Vector trial = u;
  ceres::Solve(options, problem, trial.data(), &summary);
  map.unpack(trial, scratch);
  const double value = elbo(scratch);
  if (value >= start_value) {
    u = trial;
    return value;
  }
  return start_value;
}

DgpModel optimize_lbfgs(const DgpModel& start, const DgpTrainerConfig& config, bool hold_noise) {
  const DgpParameterMap map(start);
  Vector u = map.pack(start);
  Vector mask = Vector::Ones(map.size());
  for (int i = 0; i < map.size(); ++i) {
    const auto slot = map.slots()[static_cast<std::size_t>(i)];
    if (slot == DgpParameterMap::Slot::kernel || slot == DgpParameterMap::Slot::noise) mask[i] = 0.0;
  }
  double value = kNegInf;
  if (config.frozen_iterations > 0) value = lbfgs_stage(map, start, mask, config.frozen_iterations, u);
  for (int i = 0; i < map.size(); ++i) {
    const bool noise = map.slots()[static_cast<std::size_t>(i)] == DgpParameterMap::Slot::noise;
    mask[i] = hold_noise && noise ? 0.0 : 1.0;
  }
  for (int s = 0; s < config.stages; ++s) {
    const double before = value;
    value = lbfgs_stage(map, start, mask, config.max_iterations, u);
    if (std::isfinite(before) && value - before < 1e-6 * std::max(1.0, std::abs(value))) break;
  }
  DgpModel out = start;
  map.unpack(u, out);
  return out;
}

void copy_noises(const DgpModel& from, DgpModel& to) {
  for (std::size_t l = 0; l < to.layers.size(); ++l) to.layers[l].noise = from.layers[l].noise;
}

DgpModel optimize_cmaes(const DgpModel& start, const DgpTrainerConfig& config, Rng& rng,
                        bool hold_noise) {
  const DgpParameterMap map(start);
  const Vector u0 = map.pack(start);
  SearchSpace space;
  map.box(u0, space.lower, space.upper);
  space.scale.assign(static_cast<std::size_t>(map.size()), Scale::linear);
  DgpModel scratch = start;
  auto objective = [&](const Vector& u) {
    map.unpack(u, scratch);
    if (hold_noise) copy_noises(start, scratch);
    return -elbo(scratch);
  };
  CmaesOptions opts;
  opts.budget = config.cmaes_budget;
  opts.restarts = 0;
  opts.sigma0 = 0.1;
  const OptimumResult best = cmaes(objective, space, opts, rng, &u0);
  DgpModel out = start;
  map.unpack(best.point, out);
  if (hold_noise) copy_noises(start, out);
  return out;
}

DgpModel optimize(const DgpModel& start, const DgpTrainerConfig& config, Rng& rng,
                  bool hold_noise = false) {
  return config.optimizer == DgpOptimizer::lbfgs ? optimize_lbfgs(start, config, hold_noise)
                                                 : optimize_cmaes(start, config, rng, hold_noise);
}

// Hidden dimensions whose variational means have (almost) no spread.
std::vector<std::pair<std::size_t, Eigen::Index>> collapsed_dimensions(const DgpModel& model) {
  std::vector<std::pair<std::size_t, Eigen::Index>> out;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const DgpLayer& layer = model.layers[l];
    if (!layer.hidden()) continue;
    for (Eigen::Index j = 0; j < layer.out_mean.cols(); ++j) {
      if (layer.out_mean.col(j).maxCoeff() - layer.out_mean.col(j).minCoeff() < 1e-6) {
        out.emplace_back(l, j);
      }
    }
  }
  return out;
}

}  // namespace

DgpModel init_dgp(const DgpConfig& config, const Dataset& data, Rng& rng) {
  check_config(config);
  if (data.size() < 1) throw std::invalid_argument("init_dgp: empty dataset");
  DgpModel model;
  model.config = config;
  model.data = data;
  model.y_shift = data.y.mean();
  const double sd = std::sqrt((data.y.array() - model.y_shift).square().mean());
  model.y_scale = sd > 0.0 ? sd : 1.0;

  const int n = data.size();
  const int d = data.dim();
  const int m = inducing_schedule(config.inducing, n);
  const int hidden = static_cast<int>(config.hidden_widths.size());
  Matrix inputs = data.x;
  for (int l = 0; l <= hidden; ++l) {
    DgpLayer layer;
    const int in_dim = static_cast<int>(inputs.cols());
    const double rate = l == 0 ? 10.0 : 10.0 * static_cast<double>(d) / in_dim;
    layer.kernel = ArdSqExpKernel::isotropic(in_dim, 1.0, rate);
    layer.noise = 1e-3;
    layer.inducing = pick_inducing(inputs, m, rng);
    if (l < hidden) {
      const int width = config.hidden_widths[static_cast<std::size_t>(l)];
      layer.out_mean = tile_columns(data.x, width, rng, 1e-3);
      layer.out_var = Matrix::Constant(n, width, 0.1);
      inputs = layer.out_mean;
    }
    model.layers.push_back(std::move(layer));
  }
  model.last_elbo = elbo(model);
  refresh_posterior(model);
  return model;
}

DgpModel train_dgp(DgpModel model, const DgpTrainerConfig& config, Rng& rng,
                   const DgpModel* warm_start) {
  if (model.data.size() < 3) throw std::invalid_argument("train_dgp: need at least 3 points");
  const bool warm = warm_start != nullptr && transfer_warm_start(*warm_start, model, rng);

  auto collapsed_output = [&](const DgpModel& m) {
    return m.layers.back().noise > config.noise_ceiling;
  };

  // Best fit overall, and best fit whose output is not pure noise.
  DgpModel best = model;
  double best_elbo = elbo(model);
  DgpModel best_fit = model;
  double best_fit_elbo = collapsed_output(model) ? kNegInf : best_elbo;
  auto consider = [&](DgpModel candidate) {
    const double value = elbo(candidate);
    if (!std::isfinite(value)) return;
    if (!collapsed_output(candidate) && value > best_fit_elbo) {
      best_fit_elbo = value;
      best_fit = candidate;
    }
    if (value > best_elbo || !std::isfinite(best_elbo)) {
      best_elbo = value;
      best = std::move(candidate);
    }
  };
  auto run = [&](const DgpModel& start) {
    DgpModel fitted = optimize(start, config, rng);
    const bool retry = collapsed_output(fitted);
    consider(std::move(fitted));
    if (retry) consider(optimize(start, config, rng, true));
  };

  run(model);
  const int extra = warm ? config.warm_restarts : config.restarts;
  for (int r = 0; r < extra; ++r) run(init_dgp(model.config, model.data, rng));

  DgpModel& chosen = std::isfinite(best_fit_elbo) ? best_fit : best;
  const auto collapsed = collapsed_dimensions(chosen);
  if (!collapsed.empty()) {
    DgpModel reseeded = chosen;
    for (const auto& [l, j] : collapsed) {
      DgpLayer& layer = reseeded.layers[l];
      for (Eigen::Index i = 0; i < layer.out_mean.rows(); ++i) {
        layer.out_mean(i, j) = reseeded.data.x(i, j % reseeded.data.dim()) + 1e-3 * rng.normal();
        layer.out_var(i, j) = 0.1;
      }
    }
    run(reseeded);
  }

  DgpModel out = std::isfinite(best_fit_elbo) ? std::move(best_fit) : std::move(best);
  const double value = std::isfinite(best_fit_elbo) ? best_fit_elbo : best_elbo;
  if (!std::isfinite(value)) throw TrainingFailed("train_dgp: no finite ELBO found");
  out.last_elbo = value;
  refresh_posterior(out);
  return out;
}

void refresh_posterior(DgpModel& model) {
  model.posterior.clear();
  const Matrix empty;
  const Matrix y = model.targets();
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const DgpLayer& layer = model.layers[l];
    const InputView in = layer_input(model, l, empty);
    const Matrix& out = layer.hidden() ? layer.out_mean : y;
    LayerPosterior post;
    try {
      const LayerSystem sys = solve_layer(layer.kernel, layer.inducing, *in.mean, *in.var, out,
                                          layer.noise);
      const Matrix w_inv = w_inverse(sys);
      post.projection = sys.beta * w_inv * sys.psi1t_y;
      post.var_correction = sys.kmm_factor.inverse() - w_inv;
    } catch (const NotPositiveDefinite&) {
      // Prior-only layer: zero mean, full kernel variance.
      post.projection = Matrix::Zero(layer.inducing.rows(), out.cols());
      post.var_correction = Matrix::Zero(layer.inducing.rows(), layer.inducing.rows());
    }
    model.posterior.push_back(std::move(post));
  }
}

void layer_predict(const DgpLayer& layer, const LayerPosterior& post, const Vector& in_mean,
                   const Vector& in_var, Vector& out_mean, Vector& out_var) {
  const Matrix mu = in_mean.transpose();
  const bool det = (in_var.array() == 0.0).all();
  const Matrix s = det ? Matrix() : Matrix(in_var.transpose());
  const Matrix psi1 = psi1_matrix(layer.kernel, layer.inducing, mu, s, det);  // 1 x M
  const Vector k = psi1.row(0).transpose();
  out_mean = post.projection.transpose() * k;
  const Eigen::Index dims = post.projection.cols();
  out_var.resize(dims);
  if (det) {
    const double v = layer.kernel.variance - k.dot(post.var_correction * k) + layer.noise;
    out_var.setConstant(std::max(v, 0.0));
    return;
  }
  const Matrix psi2 = psi2_uncertain(layer.kernel, layer.inducing, mu, s);
  const double common = layer.kernel.variance - post.var_correction.cwiseProduct(psi2).sum() +
                        layer.noise;
  for (Eigen::Index j = 0; j < dims; ++j) {
    const Vector b = post.projection.col(j);
    const double mb = b.dot(k);
    out_var[j] = std::max(b.dot(psi2 * b) - mb * mb + common, 0.0);
  }
}

Prediction predict_dgp_gaussian(const DgpModel& model, const Vector& x) {
  if (x.size() != model.data.dim()) throw DimensionMismatch("predict_dgp_gaussian: input dimension");
  Vector mean = x;
  Vector var = Vector::Zero(x.size());
  Vector next_mean;
  Vector next_var;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    layer_predict(model.layers[l], model.posterior[l], mean, var, next_mean, next_var);
    mean.swap(next_mean);
    var.swap(next_var);
  }
  return {model.y_shift + model.y_scale * mean[0], model.y_scale * model.y_scale * var[0]};
}

McPrediction predict_dgp_mc(const DgpModel& model, const Vector& x, int k, Rng& rng) {
  if (k < 2) throw std::invalid_argument("predict_dgp_mc: need at least two samples");
  if (x.size() != model.data.dim()) throw DimensionMismatch("predict_dgp_mc: input dimension");
  McPrediction out;
  out.samples.resize(k);
  Vector h;
  Vector mean;
  Vector var;
  for (int s = 0; s < k; ++s) {
    h = x;
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
      layer_predict(model.layers[l], model.posterior[l], h, Vector::Zero(h.size()), mean, var);
      h.resize(mean.size());
      for (Eigen::Index j = 0; j < mean.size(); ++j) h[j] = mean[j] + std::sqrt(var[j]) * rng.normal();
    }
    out.samples[s] = model.y_shift + model.y_scale * h[0];
  }
  out.mean = out.samples.mean();
  out.variance = (out.samples.array() - out.mean).square().sum() / (k - 1.0);
  return out;
}

}  // namespace dego
