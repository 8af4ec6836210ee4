#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <string>

#include "dsem/diagnostics.hpp"
#include "dsem/error.hpp"
#include "dsem/samplers.hpp"
#include "dsem/simulate.hpp"

using namespace dsem;

namespace {

struct Fixture {
  SimulationResult sim;
  Model model;
  explicit Fixture(SimulationOptions o)
      : sim(simulate(o)), model(sim.spec, Panel::from_table(sim.table, sim.spec.indicator_names())) {}
};

SimulationOptions design(const std::string& d, const std::string& link, int N, int T, std::uint64_t seed = 3) {
  SimulationOptions o;
  o.design = d;
  o.link = link;
  o.N = N;
  o.T = T;
  o.seed = seed;
  return o;
}

SamplerConfig quick(Algorithm a, int chains = 2, int warmup = 150, int samples = 50) {
  SamplerConfig c;
  c.algorithm = a;
  c.chains = chains;
  c.warmup = warmup;
  c.samples = samples;
  c.seed = 17;
  return c;
}

bool same_draws(const DrawStore& a, const DrawStore& b) {
  if (a.names != b.names || a.chains.size() != b.chains.size()) return false;
  for (std::size_t c = 0; c < a.chains.size(); ++c)
    if (a.chains[c] != b.chains[c]) return false;
  return true;
}

}  // namespace

TEST_CASE("runs are reproducible and independent of the thread count") {
  Fixture f(design("ar1-invariant", "logit", 5, 10));
  SamplerConfig c = quick(Algorithm::hybrid);
  const DrawStore a = run(f.model, c);
  const DrawStore b = run(f.model, c);
  c.threads = 2;
  const DrawStore t = run(f.model, c);
  CHECK(same_draws(a, b));
  CHECK(same_draws(a, t));
  c.seed = 18;
  CHECK_FALSE(same_draws(a, run(f.model, c)));
}

TEST_CASE("both algorithms report the same parameters in the same shape") {
  Fixture f(design("ar1-invariant", "probit", 4, 8));
  const DrawStore h = run(f.model, quick(Algorithm::hybrid));
  const DrawStore p = run(f.model, quick(Algorithm::pure_nuts));
  CHECK(h.names == p.names);
  CHECK(h.names == f.model.report_names());
  CHECK(h.num_chains() == 2);
  CHECK(h.num_draws() == 50);
  CHECK(p.num_draws() == 50);
  CHECK(h.algorithm == Algorithm::hybrid);
  CHECK(p.algorithm == Algorithm::pure_nuts);
  for (const auto& info : h.chain_info) {
    CHECK(info.step_size > 0.0);
    CHECK(info.sampling_seconds > 0.0);
  }
}

TEST_CASE("kept warmup and stored participant effects extend the draws") {
  Fixture f(design("ar1-varying", "probit", 3, 8));
  SamplerConfig c = quick(Algorithm::hybrid, 1);
  c.keep_warmup = true;
  c.store_effects = true;
  const DrawStore s = run(f.model, c);
  CHECK(s.num_draws() == 200);
  CHECK(s.warmup_kept == 150);
  CHECK(s.num_params() == static_cast<int>(f.model.report_names().size()) + f.model.dim() - f.model.population_dim());
}

TEST_CASE("the Gibbs sweep leaves pseudo-observations consistent with the data") {
  Fixture f(design("ar1-invariant", "ordinal", 4, 12));
  // Fixed thresholds: the conditional update is well defined.
  ModelSpec spec = f.sim.spec;
  for (auto& ind : spec.indicators) {
    ind.free_thresholds = false;
    ind.thresholds = {-0.5, 0.5};
  }
  spec.hybrid_free_thresholds = false;
  const Model m(spec, f.model.panel());
  ChainState st = initialize_chain(m, quick(Algorithm::hybrid), 0);
  for (int sweep = 0; sweep < 3; ++sweep) {
    gibbs_sweep(m, st, 5);
    ++st.iteration;
    for (int i = 0; i < m.N(); ++i) {
      const auto& p = m.panel().units[i];
      for (int j = 0; j < m.U(); ++j)
        for (int t = 0; t < p.horizon(); ++t) {
          if (!p.observed(j, t)) continue;
          const int y = static_cast<int>(p.y(j, t));
          const double x = st.latent.ytilde[i](j, t);
          if (y > 1) CHECK(x > (y == 2 ? -0.5 : 0.5));
          if (y < 3) CHECK(x <= (y == 1 ? -0.5 : 0.5));
        }
    }
  }
}

TEST_CASE("logit sweeps draw Polya-Gamma auxiliaries") {
  Fixture f(design("var1", "logit", 3, 6));
  ChainState st = initialize_chain(f.model, quick(Algorithm::hybrid), 0);
  gibbs_sweep(f.model, st, 5);
  CHECK(st.pg.proposals > 0);
  CHECK(st.latent.omega[0].minCoeff() > 0.0);
}

TEST_CASE("hybrid and pure NUTS agree on a small probit model") {
  Fixture f(design("ar1-invariant", "probit", 8, 20, 4));
  SamplerConfig c = quick(Algorithm::hybrid, 2, 500, 1500);
  const auto h = diag::summarize(run(f.model, c));
  c.algorithm = Algorithm::pure_nuts;
  const auto p = diag::summarize(run(f.model, c));
  for (const auto& ph : h.params) {
    const auto* pp = p.find(ph.name);
    REQUIRE(pp != nullptr);
    const double se = std::sqrt(ph.mcse * ph.mcse + pp->mcse * pp->mcse);
    CHECK_MESSAGE(std::abs(ph.mean - pp->mean) < 4.0 * se, ph.name << " " << ph.mean << " vs " << pp->mean);
  }
}

TEST_CASE("invalid sampler settings") {
  SamplerConfig c;
  c.chains = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = SamplerConfig{};
  c.warmup = 100;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = SamplerConfig{};
  c.target_accept = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_THROWS_AS(parse_algorithm("gibbs"), ConfigError);
}
