#include <benchmark/benchmark.h>

#include <map>

#include "omad/datagen.hpp"
#include "omad/estimator.hpp"
#include "omad/prior_learning.hpp"

namespace {

using namespace omad;

struct Fixture {
  GeneratedCategory cat;
  std::vector<Scene> scenes;
};

const Fixture& fixture(CategoryTemplate t) {
  static std::map<CategoryTemplate, Fixture> cache;
  auto it = cache.find(t);
  if (it == cache.end()) {
    Fixture f;
    CategorySpec spec;
    spec.category = t;
    f.cat = gen_category(spec, 20, 1);
    f.scenes = gen_scenes(f.cat.prior, f.cat.betas, 64, 0.0, {}, 2);
    it = cache.emplace(t, std::move(f)).first;
  }
  return it->second;
}

CategoryTemplate template_arg(const benchmark::State& state) {
  return all_categories()[static_cast<std::size_t>(state.range(0))];
}

void BM_Deform(benchmark::State& state) {
  const Fixture& f = fixture(template_arg(state));
  const OmadPrior& p = f.cat.prior;
  const Scene& s = f.scenes.front();
  const Keypoints canon = shape_apply(p.basis, s.beta_star);
  const JointParamSet params = joint_apply(p.gamma, s.beta_star, p.tree);
  for (auto _ : state) benchmark::DoNotOptimize(deform(p.tree, canon, params, s.states_star));
  state.SetLabel(to_string(template_arg(state)));
}
BENCHMARK(BM_Deform)->DenseRange(0, 4);

void BM_EnergyJacobian(benchmark::State& state) {
  const Fixture& f = fixture(template_arg(state));
  const Scene& s = f.scenes.front();
  for (auto _ : state) {
    benchmark::DoNotOptimize(energy_jacobian(f.cat.prior, s.beta_star, s.states_star, s.targets_clean));
  }
  state.SetLabel(to_string(template_arg(state)));
}
BENCHMARK(BM_EnergyJacobian)->DenseRange(0, 4);

void BM_Fit(benchmark::State& state) {
  const Fixture& f = fixture(template_arg(state));
  std::size_t i = 0;
  for (auto _ : state) {
    const Scene& s = f.scenes[i++ % f.scenes.size()];
    benchmark::DoNotOptimize(fit({&f.cat.prior, s.targets_clean, std::nullopt}, {}));
  }
  state.SetLabel(to_string(template_arg(state)));
}
BENCHMARK(BM_Fit)->DenseRange(0, 4)->Unit(benchmark::kMillisecond);

void BM_FitJointFunction(benchmark::State& state) {
  const Fixture& f = fixture(CategoryTemplate::Hinge3);
  const BasisFit basis = learn_basis(f.cat.train, 3);
  LearnConfig cfg;
  cfg.epochs = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(fit_joint_function(f.cat.train, basis.betas, cfg));
}
BENCHMARK(BM_FitJointFunction)->Arg(100)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
