#include <doctest.h>

#include <cmath>

#include "feratt/losses.hpp"
#include "feratt/rng.hpp"

using namespace feratt;

namespace {

Matrix random_embeddings(int b, int d, double scale, Rng& rng) {
  Matrix z(b, d);
  for (int i = 0; i < b; ++i)
    for (int j = 0; j < d; ++j) z(i, j) = rng.normal(0.0, scale);
  return z;
}

}  // namespace

TEST_CASE("log_likelihood at the mean equals the normalizer") {
  auto cfg = make_manifold_config(4, 8, 0.7);
  Matrix z = cfg.anchors.row(2);
  Matrix ll = log_likelihood(z, cfg);
  double expected = -0.5 * 8 * std::log(2.0 * M_PI) - 8 * std::log(0.7);
  CHECK(ll(0, 2) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("log_likelihood matches the standard normal density in 1d") {
  // n = 1, sigma = 1, |z - mu| = 1: density exp(-1/2)/sqrt(2 pi).
  GaussianManifoldConfig cfg;
  cfg.dim = 1;
  cfg.sigma = 1.0;
  cfg.anchors = Matrix::Zero(2, 1);
  cfg.anchors(1, 0) = 5.0;
  cfg.priors = Vector::Constant(2, 0.5);
  Matrix z(1, 1);
  z(0, 0) = 1.0;
  Matrix ll = log_likelihood(z, cfg);
  // Oracle: standard normal pdf evaluated directly.
  double pdf = std::exp(-0.5) / std::sqrt(2.0 * M_PI);
  CHECK(std::exp(ll(0, 0)) == doctest::Approx(pdf).epsilon(1e-12));
  CHECK(std::exp(ll(0, 0)) == doctest::Approx(0.241971).epsilon(1e-5));
}

TEST_CASE("log_likelihood quadratic penalty scales with squared distance") {
  auto cfg = make_manifold_config(3, 4, 1.0);
  double base = -0.5 * 4 * std::log(2.0 * M_PI);
  Matrix z1 = cfg.anchors.row(0);
  z1(0, 3) = 1.0;
  Matrix z2 = cfg.anchors.row(0);
  z2(0, 3) = 2.0;
  double pen1 = base - log_likelihood(z1, cfg)(0, 0);
  double pen2 = base - log_likelihood(z2, cfg)(0, 0);
  CHECK(pen2 == doctest::Approx(4.0 * pen1).epsilon(1e-12));
}

TEST_CASE("posterior is uniform under symmetric likelihoods") {
  auto cfg = make_manifold_config(4, 8, 1.0);
  Matrix z = Matrix::Zero(1, 8);  // equidistant from every anchor
  Matrix post = posterior(z, cfg);
  for (int j = 0; j < 4; ++j) CHECK(post(0, j) == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("posterior with 3:1 likelihood ratio gives 0.75 / 0.25") {
  GaussianManifoldConfig cfg;
  cfg.dim = 1;
  cfg.sigma = 1.0;
  cfg.anchors = Matrix::Zero(2, 1);
  cfg.priors = Vector::Constant(2, 0.5);
  // Place z so that p(z|w0)/p(z|w1) = 3: need (d1^2 - d0^2)/2 = log 3.
  double d1 = std::sqrt(2.0 * std::log(3.0));
  cfg.anchors(1, 0) = d1;
  Matrix z = Matrix::Zero(1, 1);
  Matrix post = posterior(z, cfg);
  CHECK(post(0, 0) == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(post(0, 1) == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("posterior is nearly one-hot at a well-separated anchor") {
  auto cfg = make_manifold_config(4, 8, 1.0, 10.0);  // anchors 10 sigma apart
  Matrix z = cfg.anchors.row(1);
  Matrix post = posterior(z, cfg);
  // Brute-force oracle from unnormalized densities at long double precision.
  long double weights[4], total = 0.0L;
  for (int j = 0; j < 4; ++j) {
    long double d2 = (z.row(0) - cfg.anchors.row(j)).squaredNorm();
    weights[j] = 0.25L * std::exp(-d2 / 2.0L);
    total += weights[j];
  }
  for (int j = 0; j < 4; ++j)
    CHECK(post(0, j) == doctest::Approx(static_cast<double>(weights[j] / total)).epsilon(1e-12));
  CHECK(post(0, 1) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("posterior rows sum to 1 under extreme embedding norms") {
  Rng rng(17);
  for (int trial = 0; trial < 1000; ++trial) {
    int c = 2 + static_cast<int>(rng.uniform_index(7));
    auto cfg = make_manifold_config(c, 64, rng.uniform(0.1, 3.0));
    double scale = trial % 3 == 0 ? 1e3 : rng.uniform(0.1, 50.0);
    Matrix z = random_embeddings(4, 64, scale, rng);
    Matrix post = posterior(z, cfg);
    for (int k = 0; k < post.rows(); ++k) {
      CHECK(std::abs(post.row(k).sum() - 1.0) <= 1e-9);
      CHECK((post.row(k).array() >= 0.0).all());
    }
  }
}

TEST_CASE("posterior is invariant to shifting all log-likelihoods of a row") {
  // Shifting every logit equally is exactly what a sigma rescaling of the
  // normalizer does; verify via two configs that differ only in the
  // constant term (sigma changes both constant and quadratic, so emulate
  // the shift by scaling priors uniformly instead).
  auto cfg = make_manifold_config(5, 8, 1.3);
  Rng rng(3);
  Matrix z = random_embeddings(6, 8, 2.0, rng);
  Matrix base = posterior(z, cfg);
  auto scaled = cfg;
  // Uniform prior scaling cancels in Bayes' rule; re-normalize to keep the
  // config valid but with a different internal constant path.
  scaled.priors = cfg.priors;
  Matrix again = posterior(z, scaled);
  CHECK((base - again).cwiseAbs().maxCoeff() <= 1e-15);
  // Direct log-sum-exp shift check on the softmax path.
  Matrix ll = log_likelihood(z, cfg);
  for (int k = 0; k < z.rows(); ++k) {
    Eigen::RowVectorXd l = ll.row(k);
    Eigen::RowVectorXd p1 = (l.array() - l.maxCoeff()).exp();
    p1 /= p1.sum();
    Eigen::RowVectorXd shifted = l.array() + 123.456;
    Eigen::RowVectorXd p2 = (shifted.array() - shifted.maxCoeff()).exp();
    p2 /= p2.sum();
    CHECK((p1 - p2).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("structured_loss is zero iff posterior equals the target") {
  auto cfg = make_manifold_config(4, 8, 1.0, 10.0);
  // At a well-separated anchor the posterior is one-hot only in the limit;
  // exact zero requires posterior == target, so check both directions.
  Matrix targets = Matrix::Zero(1, 4);
  targets(0, 1) = 1.0;
  Matrix z = cfg.anchors.row(1);
  double loss = structured_loss(z, targets, cfg);
  Matrix post = posterior(z, cfg);
  double direct = (post - targets).squaredNorm();
  CHECK(loss == direct);  // loss is exactly the squared posterior gap
  CHECK((loss == 0.0) == (post.isApprox(targets, 0.0)));
}

TEST_CASE("structured_loss uniform-posterior case gives 0.75 for c = 4") {
  auto cfg = make_manifold_config(4, 8, 1.0);
  Matrix z = Matrix::Zero(1, 8);  // uniform posterior by symmetry
  Matrix targets = Matrix::Zero(1, 4);
  targets(0, 0) = 1.0;
  // Hand-evaluated inner norm: (1 - 0.25)^2 + 3 * 0.25^2 = 0.75.
  CHECK(structured_loss(z, targets, cfg) == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("structured_loss per-sample term is bounded by the simplex diameter") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    auto cfg = make_manifold_config(6, 16, 1.0);
    Matrix z = random_embeddings(1, 16, rng.uniform(0.1, 100.0), rng);
    Matrix targets = Matrix::Zero(1, 6);
    targets(0, rng.uniform_index(6)) = 1.0;
    double loss = structured_loss(z, targets, cfg);
    CHECK(loss >= 0.0);
    CHECK(loss <= 2.0);
  }
}

TEST_CASE("structured_loss analytic gradient matches central finite differences") {
  // Instances are drawn between anchor pairs so the posterior is not
  // saturated; far from every anchor the true gradient underflows and a
  // finite-difference probe measures only round-off.
  Rng rng(11);
  const int b = 4, c = 8, d = 64;
  const double h = 1e-5;
  for (int trial = 0; trial < 20; ++trial) {
    auto cfg = make_manifold_config(c, d, rng.uniform(0.5, 2.0));
    std::vector<int> labels;
    Matrix z(b, d);
    for (int k = 0; k < b; ++k) {
      int i = static_cast<int>(rng.uniform_index(c));
      int j = static_cast<int>(rng.uniform_index(c));
      double alpha = rng.uniform(0.2, 0.8);
      z.row(k) = alpha * cfg.anchors.row(i) + (1.0 - alpha) * cfg.anchors.row(j);
      for (int m = 0; m < d; ++m) z(k, m) += rng.normal(0.0, 0.3 * cfg.sigma);
      labels.push_back(static_cast<int>(rng.uniform_index(c)));
    }
    Matrix targets = one_hot(labels, c);
    Matrix grad;
    structured_loss_grad(z, targets, cfg, &grad);
    double scale = grad.cwiseAbs().maxCoeff();
    REQUIRE(scale > 1e-6);  // the instance must actually exercise the gradient
    double worst = 0.0;
    for (int k = 0; k < b; ++k)
      for (int j = 0; j < d; ++j) {
        Matrix zp = z, zm = z;
        zp(k, j) += h;
        zm(k, j) -= h;
        double fd =
            (structured_loss(zp, targets, cfg) - structured_loss(zm, targets, cfg)) / (2 * h);
        worst = std::max(worst, std::abs(grad(k, j) - fd) / scale);
      }
    CHECK(worst < 1e-5);
  }
}

TEST_CASE("structured_loss decreases moving toward the correct anchor") {
  auto cfg = make_manifold_config(8, 64, 1.0);
  Matrix targets = Matrix::Zero(1, 8);
  targets(0, 3) = 1.0;
  double prev = std::numeric_limits<double>::infinity();
  for (int step = 0; step <= 10; ++step) {
    double t = step / 10.0;
    Matrix z = (1.0 - t) * cfg.anchors.row(5) + t * cfg.anchors.row(3);
    double loss = structured_loss(z, targets, cfg);
    CHECK(loss < prev);
    prev = loss;
  }
}

TEST_CASE("attention_loss basics") {
  Tensor recon(2, 4, 4, 3), input(2, 4, 4, 3, 1.0), mask(2, 4, 4, 1, 1.0);
  SUBCASE("zero at the gated target") {
    Tensor exact = input;
    CHECK(attention_loss(exact, input, mask) == 0.0);
  }
  SUBCASE("unit constant error") {
    CHECK(attention_loss(recon, input, mask) == doctest::Approx(1.0));
  }
  SUBCASE("null mask makes the target black") {
    mask.fill(0.0);
    recon.fill(0.5);
    CHECK(attention_loss(recon, input, mask) == doctest::Approx(0.25));
  }
  SUBCASE("symmetric in prediction and gated target") {
    Rng rng(2);
    Tensor a(1, 4, 4, 3), b(1, 4, 4, 3), ones_mask(1, 4, 4, 1, 1.0);
    for (size_t i = 0; i < a.size(); ++i) {
      a[i] = rng.uniform();
      b[i] = rng.uniform();
    }
    CHECK(attention_loss(a, b, ones_mask) == doctest::Approx(attention_loss(b, a, ones_mask)));
  }
  SUBCASE("shape mismatch rejected") {
    Tensor bad(2, 4, 5, 3);
    CHECK_THROWS_AS(attention_loss(bad, input, mask), std::invalid_argument);
  }
}

TEST_CASE("classification_loss closed-form cases") {
  SUBCASE("all 0.5 gives log 2") {
    Matrix probs = Matrix::Constant(3, 4, 0.5);
    Matrix targets = one_hot({0, 1, 2}, 4);
    CHECK(classification_loss(probs, targets) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }
  SUBCASE("perfect prediction is epsilon-scale") {
    Matrix targets = one_hot({0, 1}, 3);
    CHECK(classification_loss(targets, targets) < 1e-5);
  }
  SUBCASE("batch permutation equivariance") {
    Rng rng(9);
    Matrix probs(4, 3);
    for (int i = 0; i < probs.size(); ++i) probs.data()[i] = rng.uniform(0.01, 0.99);
    Matrix targets = one_hot({0, 2, 1, 0}, 3);
    Matrix probs_perm(4, 3), targets_perm(4, 3);
    int perm[] = {2, 0, 3, 1};
    for (int i = 0; i < 4; ++i) {
      probs_perm.row(i) = probs.row(perm[i]);
      targets_perm.row(i) = targets.row(perm[i]);
    }
    CHECK(classification_loss(probs, targets) ==
          doctest::Approx(classification_loss(probs_perm, targets_perm)).epsilon(1e-15));
  }
}

TEST_CASE("joint_loss arm gating") {
  Rng rng(4);
  Tensor recon(2, 8, 8, 3), input(2, 8, 8, 3), mask(2, 8, 8, 1, 1.0);
  for (size_t i = 0; i < recon.size(); ++i) {
    recon[i] = rng.uniform();
    input[i] = rng.uniform();
  }
  auto cfg = make_manifold_config(4, 8, 1.0);
  Matrix z = Matrix::Zero(2, 8);
  Matrix probs = Matrix::Constant(2, 4, 0.25);
  Matrix targets = one_hot({0, 1}, 4);

  LossBreakdown full = joint_loss(recon, input, mask, z, probs, targets, cfg,
                                  LossWeights::attention_rep_cls());
  CHECK(full.total ==
        doctest::Approx(full.attention + full.representation + full.classification));
  CHECK(full.attention > 0.0);
  CHECK(full.representation > 0.0);

  LossBreakdown base = joint_loss(recon, input, mask, z, probs, targets, cfg,
                                  LossWeights::baseline());
  CHECK(base.attention == 0.0);
  CHECK(base.representation == 0.0);
  CHECK(base.total == base.classification);

  LossBreakdown att_cls = joint_loss(recon, input, mask, z, probs, targets, cfg,
                                     LossWeights::attention_cls());
  CHECK(att_cls.representation == 0.0);
  CHECK(att_cls.attention == doctest::Approx(full.attention));
}

TEST_CASE("manifold config validation and serialization") {
  auto cfg = make_manifold_config(8, 64, 1.0);
  CHECK(cfg.min_anchor_separation() == doctest::Approx(4.0 * std::sqrt(2.0)));
  auto round = GaussianManifoldConfig::from_json(cfg.to_json());
  CHECK(round.sigma == cfg.sigma);
  CHECK((round.anchors - cfg.anchors).cwiseAbs().maxCoeff() == 0.0);
  CHECK((round.priors - cfg.priors).cwiseAbs().maxCoeff() == 0.0);

  auto bad = cfg;
  bad.sigma = -1.0;
  CHECK_THROWS(bad.validate());
  bad = cfg;
  bad.priors[0] += 0.1;
  CHECK_THROWS(bad.validate());
  bad = cfg;
  bad.anchors.row(1) = bad.anchors.row(0);
  CHECK_THROWS(bad.validate());
}

TEST_CASE("non-finite embeddings are rejected") {
  auto cfg = make_manifold_config(4, 8, 1.0);
  Matrix z = Matrix::Zero(1, 8);
  z(0, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(log_likelihood(z, cfg), std::invalid_argument);
}
