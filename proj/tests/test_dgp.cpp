#include <cmath>

#include "doctest.h"
#include "dego/dgp.hpp"
#include "dego/doe.hpp"
#include "oracles.hpp"

using namespace dego;

namespace {

DgpTrainerConfig quick_trainer() {
  DgpTrainerConfig c;
  c.frozen_iterations = 20;
  c.max_iterations = 60;
  c.stages = 1;
  c.restarts = 0;
  return c;
}

Dataset wave_data(int n, Rng& rng) {
  Dataset data{lhs(n, 1, rng), Vector(n)};
  for (int i = 0; i < n; ++i) data.y[i] = std::sin(6.0 * data.x(i, 0)) + 0.5 * data.x(i, 0);
  return data;
}

Matrix random_matrix(Eigen::Index r, Eigen::Index c, double lo, double hi, Rng& rng) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = rng.uniform(lo, hi);
  return m;
}

}  // namespace

TEST_SUITE("dgp") {
  TEST_CASE("psi statistics with deterministic inputs") {
    Rng rng(1);
    const ArdSqExpKernel k = ArdSqExpKernel::isotropic(2, 1.3, 2.0);
    const Matrix z = random_matrix(3, 2, 0.0, 1.0, rng);
    const Matrix mu = random_matrix(4, 2, 0.0, 1.0, rng);
    const PsiStats p = psi_statistics(k, z, mu, Matrix::Zero(4, 2));
    const Matrix knm = oracle::dense_gram(k, mu, z);
    CHECK((p.psi1 - knm).cwiseAbs().maxCoeff() < 1e-14);
    CHECK((p.psi2 - knm.transpose() * knm).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(p.psi0 == doctest::Approx(4 * 1.3));
  }

  TEST_CASE("psi statistics match monte carlo") {
    Rng rng(2);
    const ArdSqExpKernel k = ArdSqExpKernel::isotropic(1, 0.9, 3.0);
    const Matrix z = random_matrix(2, 1, 0.0, 1.0, rng);
    const Matrix mu = random_matrix(3, 1, 0.0, 1.0, rng);
    const Matrix s = random_matrix(3, 1, 0.01, 0.1, rng);
    const PsiStats p = psi_statistics(k, z, mu, s);
    const PsiStats mc = oracle::mc_psi(k, z, mu, s, 1000000, rng);
    CHECK(p.psi0 == doctest::Approx(3 * 0.9));
    CHECK(((p.psi1 - mc.psi1).array() / mc.psi1.array()).abs().maxCoeff() < 0.01);
    CHECK(((p.psi2 - mc.psi2).array() / mc.psi2.array()).abs().maxCoeff() < 0.01);
    CHECK((p.psi2 - p.psi2.transpose()).norm() < 1e-14);
    CHECK(Eigen::SelfAdjointEigenSolver<Matrix>(p.psi2).eigenvalues().minCoeff() > -1e-12);
  }

  TEST_CASE("bound is tight at Z = X without jitter") {
    Rng rng(3);
    const ArdSqExpKernel k = ArdSqExpKernel::isotropic(2, 1.1, 4.0);
    const Matrix x = lhs(6, 2, rng);
    const Matrix y = random_matrix(6, 1, -1.0, 1.0, rng);
    const double noise = 0.05;
    Matrix c = oracle::dense_gram(k, x, x);
    c.diagonal().array() += noise;
    const double exact = oracle::log_normal_dense(y.col(0), Vector::Zero(6), c);
    const Matrix empty;
    const double tight = sparse_layer_bound(k, x, x, empty, y, empty, noise, nullptr, 0.0);
    CHECK(std::abs(tight - exact) < 1e-6);
    const double jittered = sparse_layer_bound(k, x, x, empty, y, empty, noise);
    CHECK(jittered <= exact + 1e-8);
    CHECK(std::abs(jittered - exact) < 1e-4);
    const double sparse = sparse_layer_bound(k, x.topRows(3), x, empty, y, empty, noise);
    CHECK(sparse <= exact + 1e-8);
    CHECK_THROWS_AS(sparse_layer_bound(k, x, x, empty, y, empty, noise, nullptr, -1.0),
                    std::invalid_argument);
  }

  TEST_CASE("layer bound gradient matches finite differences") {
    Rng rng(4);
    Dataset data = wave_data(6, rng);
    DgpConfig cfg;
    cfg.hidden_widths = {2};
    const DgpModel model = init_dgp(cfg, data, rng);
    const DgpParameterMap map(model);
    Vector u = map.pack(model);
    for (int i = 0; i < u.size(); ++i) u[i] += 0.1 * rng.normal();
    DgpModel scratch = model;
    Vector grad;
    map.elbo_and_gradient(u, scratch, grad);
    double worst = 0.0;
    for (int i = 0; i < u.size(); ++i) {
      const double h = 1e-4;
      Vector up = u;
      Vector dn = u;
      up[i] += h;
      dn[i] -= h;
      Vector g;
      const double fd = (map.elbo_and_gradient(up, scratch, g) - map.elbo_and_gradient(dn, scratch, g)) /
                        (2.0 * h);
      worst = std::max(worst, std::abs(fd - grad[i]) / std::max(1.0, std::abs(fd)));
    }
    CHECK(worst < 1e-4);
  }

  TEST_CASE("pack and unpack round trip") {
    Rng rng(5);
    const Dataset data = wave_data(5, rng);
    const DgpModel model = init_dgp({}, data, rng);
    const DgpParameterMap map(model);
    CHECK(map.size() == model.parameter_count());
    DgpModel copy = model;
    map.unpack(map.pack(model), copy);
    CHECK(std::abs(elbo(copy) - elbo(model)) < 1e-8);
  }

  TEST_CASE("deterministic hidden layer reduces to two dense GPs") {
    Rng rng(6);
    Dataset data{Matrix(4, 1), Vector(4)};
    data.x << 0.1, 0.4, 0.65, 0.9;
    data.y << 0.3, -0.8, 0.5, 1.2;
    DgpConfig cfg;
    cfg.hidden_widths = {1};
    DgpModel model = init_dgp(cfg, data, rng);
    model.y_shift = 0.0;
    model.y_scale = 1.0;
    DgpLayer& hidden = model.layers[0];
    DgpLayer& out = model.layers[1];
    hidden.kernel = ArdSqExpKernel::isotropic(1, 1.0, 5.0);
    hidden.noise = 0.01;
    hidden.inducing = data.x;
    hidden.out_mean = Matrix(4, 1);
    hidden.out_mean << -0.5, 0.2, 0.9, 0.4;
    hidden.out_var = Matrix::Constant(4, 1, 1e-10);
    out.kernel = ArdSqExpKernel::isotropic(1, 1.5, 2.0);
    out.noise = 0.02;
    out.inducing = hidden.out_mean;

    Matrix c0 = oracle::dense_gram(hidden.kernel, data.x, data.x);
    c0.diagonal().array() += hidden.noise;
    Matrix c1 = oracle::dense_gram(out.kernel, hidden.out_mean, hidden.out_mean);
    c1.diagonal().array() += out.noise;
    const double dense = oracle::log_normal_dense(hidden.out_mean.col(0), Vector::Zero(4), c0) +
                         oracle::log_normal_dense(data.y, Vector::Zero(4), c1);
    const double entropy = 4 * 0.5 * (std::log(2.0 * std::numbers::pi * 1e-10) + 1.0);
    CHECK(std::abs(elbo(model) - entropy - dense) < 1e-3);
  }

  TEST_CASE("elbo lower-bounds the monte carlo evidence") {
    Rng rng(7);
    Dataset data{Matrix(4, 1), Vector(4)};
    data.x << 0.05, 0.35, 0.6, 0.95;
    data.y << 0.1, 0.9, -0.4, 0.3;
    DgpConfig cfg;
    cfg.hidden_widths = {1};
    DgpModel model = init_dgp(cfg, data, rng);
    model = train_dgp(model, quick_trainer(), rng);
    const DgpLayer& h = model.layers[0];
    const DgpLayer& o = model.layers[1];
    const oracle::McEstimate ev = oracle::mc_log_evidence_1hl(h.kernel, h.noise, o.kernel, o.noise, data.x,
                                                              model.targets().col(0), 1, 100000, rng);
    CHECK(elbo(model) <= ev.value + 3.0 * ev.std_error);
  }

  TEST_CASE("elbo responds to the variational variances") {
    Rng rng(8);
    const Dataset data = wave_data(6, rng);
    DgpModel model = init_dgp({}, data, rng);
    const double before = elbo(model);
    model.layers[0].out_var *= 2.0;
    CHECK(elbo(model) != before);
  }

  TEST_CASE("inducing counts follow the schedule") {
    Rng rng(9);
    const Dataset data = wave_data(5, rng);
    DgpConfig cfg;
    cfg.hidden_widths = {2, 2};
    const DgpModel dynamic = init_dgp(cfg, data, rng);
    for (const DgpLayer& l : dynamic.layers) CHECK(l.inducing_count() == 5);
    cfg.inducing = {InducingMode::fixed, 25};
    const DgpModel fixed = init_dgp(cfg, data, rng);
    for (const DgpLayer& l : fixed.layers) CHECK(l.inducing_count() == 25);
    CHECK(inducing_schedule({InducingMode::fixed, 25}, 40) == 25);
    CHECK(inducing_schedule({}, 40) == 40);
    cfg.hidden_widths = {0};
    CHECK_THROWS_AS(init_dgp(cfg, data, rng), std::invalid_argument);
  }

  TEST_CASE("initialization and training are deterministic per seed") {
    Rng data_rng(10);
    const Dataset data = wave_data(6, data_rng);
    Rng a(3);
    Rng b(3);
    const DgpModel ia = init_dgp({}, data, a);
    const DgpModel ib = init_dgp({}, data, b);
    CHECK(ia.layers[0].inducing == ib.layers[0].inducing);
    CHECK(ia.layers[0].out_mean == ib.layers[0].out_mean);
    const DgpModel ta = train_dgp(ia, quick_trainer(), a);
    const DgpModel tb = train_dgp(ib, quick_trainer(), b);
    CHECK(ta.last_elbo == tb.last_elbo);
    CHECK(ta.layers[1].kernel.rates == tb.layers[1].kernel.rates);
  }

  TEST_CASE("training never loses ELBO and warm restarts keep it") {
    Rng rng(11);
    const Dataset data = wave_data(6, rng);
    const DgpModel init = init_dgp({}, data, rng);
    const DgpModel first = train_dgp(init, quick_trainer(), rng);
    CHECK(first.last_elbo >= elbo(init) - 1e-9);
    const DgpModel again = train_dgp(init_dgp({}, data, rng), quick_trainer(), rng, &first);
    CHECK(again.last_elbo >= first.last_elbo - 1e-9);
  }

  TEST_CASE("zero input variance gives the sparse GP mean") {
    Rng rng(12);
    const Dataset data = wave_data(7, rng);
    DgpConfig cfg;
    cfg.hidden_widths = {};
    cfg.inducing = {InducingMode::fixed, 4};
    const DgpModel model = init_dgp(cfg, data, rng);
    const DgpLayer& layer = model.layers[0];
    const Matrix& z = layer.inducing;
    Matrix kmm = oracle::dense_gram(layer.kernel, z, z);
    kmm.diagonal().array() += kInducingJitter * layer.kernel.variance;
    const Matrix kmn = oracle::dense_gram(layer.kernel, z, data.x);
    const double beta = 1.0 / layer.noise;
    const Matrix w = kmm + beta * kmn * kmn.transpose();
    const Vector proj = beta * w.inverse() * kmn * model.targets().col(0);
    for (double t : {0.15, 0.5, 0.85}) {
      const Matrix xs = Matrix::Constant(1, 1, t);
      const double ref = (oracle::dense_gram(layer.kernel, xs, z) * proj)(0);
      const Prediction p = predict_dgp_gaussian(model, Vector::Constant(1, t));
      CHECK(std::abs((p.mean - model.y_shift) / model.y_scale - ref) < 1e-6);
    }
  }

  TEST_CASE("one hidden layer competes with a GP on stationary data") {
    Rng rng(13);
    const int n = 20;
    const int held = 50;
    Matrix x(n + held, 1);
    for (int i = 0; i < n + held; ++i) x(i, 0) = rng.uniform();
    Matrix c = oracle::dense_gram(ArdSqExpKernel::isotropic(1, 1.0, 20.0), x, x);
    c.diagonal().array() += 1e-2;
    const Matrix l = c.llt().matrixL();
    Vector e(n + held);
    for (int i = 0; i < n + held; ++i) e[i] = rng.normal();
    const Vector draw = l * e;
    const Dataset data{x.topRows(n), draw.head(n)};
    const DgpModel dgp = train_dgp(init_dgp({}, data, rng), {}, rng);
    const GpModel gp = fit_gp(data, {}, {}, rng);
    double se_dgp = 0.0;
    double se_gp = 0.0;
    for (int i = n; i < n + held; ++i) {
      const Vector t = x.row(i).transpose();
      se_dgp += std::pow(predict_dgp_gaussian(dgp, t).mean - draw[i], 2);
      se_gp += std::pow(gp.predict(t).mean - draw[i], 2);
    }
    CHECK(std::sqrt(se_dgp) <= 2.0 * std::sqrt(se_gp));
  }

  TEST_CASE("monte carlo prediction") {
    Rng rng(14);
    const Dataset data = wave_data(6, rng);
    const DgpModel model = train_dgp(init_dgp({}, data, rng), quick_trainer(), rng);
    const Vector x = Vector::Constant(1, 0.37);
    Rng a(5);
    Rng b(5);
    const McPrediction pa = predict_dgp_mc(model, x, 50, a);
    const McPrediction pb = predict_dgp_mc(model, x, 50, b);
    CHECK(pa.samples == pb.samples);
    const McPrediction two = predict_dgp_mc(model, x, 2, a);
    CHECK(two.variance == doctest::Approx(0.5 * std::pow(two.samples[0] - two.samples[1], 2)));
    CHECK_THROWS_AS(predict_dgp_mc(model, x, 1, a), std::invalid_argument);
    const McPrediction big = predict_dgp_mc(model, x, 10000, a);
    const Prediction g = predict_dgp_gaussian(model, x);
    CHECK(std::abs(big.mean - g.mean) <= 3.0 * std::sqrt(big.variance / 10000));
    CHECK(g.variance >= 0.0);
  }
}
