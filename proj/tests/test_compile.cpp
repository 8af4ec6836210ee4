#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "dsem/compile.hpp"
#include "dsem/error.hpp"
#include "support.hpp"

using namespace dsem;
using dsem::testing::random_matrix;
using dsem::testing::random_within_spec;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

double max_rel_diff(const MatrixXd& a, const MatrixXd& b) {
  return ((a - b).array().abs() / (1.0 + a.array().abs())).maxCoeff();
}

}  // namespace

TEST_CASE("direct recursion and compiled state-space simulation agree with shared noise") {
  RandomStream rng(StreamKey{21, 0, 0, SiteKind::test});
  for (int rep = 0; rep < 200; ++rep) {
    const int horizon = 10;
    const WithinModelSpec spec = random_within_spec(rng, 2, 3, 4, horizon);
    const AugmentedStateLayout layout(spec);
    const VectorXd x1 = random_matrix(layout.dim(), 1, rng);
    const MatrixXd xi = random_matrix(spec.V, horizon, rng);
    const auto direct = simulate_within_direct(spec, x1, xi, horizon);
    const auto compiled = simulate_within_compiled(spec, x1, xi, horizon);
    CHECK(max_rel_diff(direct.eta, compiled.eta) < 1e-10);
    CHECK(max_rel_diff(direct.ystar, compiled.ystar) < 1e-10);
  }
}

TEST_CASE("process noise covariance is G Psi G'") {
  RandomStream rng(StreamKey{22, 0, 0, SiteKind::test});
  const WithinModelSpec spec = random_within_spec(rng);
  const auto blocks = build_transition(spec, 0);
  CHECK((blocks.W - blocks.G * spec.Psi * blocks.G.transpose()).norm() < 1e-12);
  CHECK((blocks.W - blocks.W.transpose()).norm() == 0.0);
}

TEST_CASE("a first-order factor model compiles to Lambda in the measurement and Phi in the transition") {
  WithinModelSpec s = WithinModelSpec::zeros(3, 1, 1);
  s.Lambda[0] << 1.0, 0.8, 1.1;
  s.B[1](0, 0) = 0.4;
  s.Psi(0, 0) = 0.84;
  const auto blocks = build_transition(s, 0);
  const AugmentedStateLayout layout(s);
  // eta_{t+1} = 0.4 eta_t + xi;  y*_{t+1} = Lambda eta_{t+1}
  CHECK(blocks.T(layout.eta_index(0, 0), layout.eta_index(0, 0)) == doctest::Approx(0.4));
  CHECK(blocks.W(layout.eta_index(0, 0), layout.eta_index(0, 0)) == doctest::Approx(0.84));
  CHECK(blocks.G(layout.ystar_index(0, 1), 0) == doctest::Approx(0.8));
}

TEST_CASE("compiled systems are valid state-space models") {
  RandomStream rng(StreamKey{23, 0, 0, SiteKind::test});
  for (int rep = 0; rep < 20; ++rep) {
    const WithinModelSpec spec = random_within_spec(rng, 2, 2, 3, 6);
    const auto sys = build_system(spec, MatrixXd::Constant(spec.U, 6, 0.5), 6);
    CHECK_NOTHROW(sys.validate());
    CHECK(sys.state_dim() == AugmentedStateLayout(spec).dim());
  }
}

TEST_CASE("inconsistent specifications are rejected") {
  WithinModelSpec s = WithinModelSpec::zeros(2, 1, 1);
  s.Lambda.pop_back();
  CHECK_THROWS_AS(s.validate(), SpecError);
  WithinModelSpec t = WithinModelSpec::zeros(2, 1, 1);
  t.nu = VectorXd::Zero(3);
  CHECK_THROWS_AS(t.validate(), ConfigError);
}
