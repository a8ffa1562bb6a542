#include <benchmark/benchmark.h>

#include <random>

#include "mmreact/actionparse.hpp"
#include "mmreact/experts.hpp"
#include "mmreact/pal_math.hpp"
#include "mmreact/prompting.hpp"
#include "mmreact/serialize.hpp"

using namespace mmreact;

namespace {

const ExpertRegistry& registry() {
  static const ExpertRegistry r = [] {
    ExpertEnvironment env;
    env.fixtures = std::make_shared<FixtureStore>(std::filesystem::path(MMREACT_DATA_DIR) / "fixtures");
    env.search = std::make_shared<SearchCorpus>();
    return make_builtin_registry(env, default_expert_names());
  }();
  return r;
}

void BM_ParseFinalAnswer(benchmark::State& state) {
  std::string text;
  while (text.size() < static_cast<std::size_t>(state.range(0))) {
    text += "The receipts add up to a little under fifty dollars. ";
  }
  for (auto _ : state) benchmark::DoNotOptimize(parse_llm_output(text));
  state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations() * text.size()));
}
BENCHMARK(BM_ParseFinalAnswer)->Range(64, 16 << 10);

void BM_ParseBatch(benchmark::State& state) {
  std::string text = "I need each receipt.\n";
  for (int i = 0; i < state.range(0); ++i) {
    text += "Assistant, receipt understanding <receipts/receipt" + std::to_string(i) + ".png>\n";
  }
  ParseOptions options;
  options.resolvable = [](std::string_view clause) { return can_resolve(clause, registry()); };
  for (auto _ : state) benchmark::DoNotOptimize(parse_llm_output(text, options));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ParseBatch)->RangeMultiplier(4)->Range(1, 256);

void BM_SerializeDetections(benchmark::State& state) {
  std::mt19937 rng(1);
  std::vector<Detection> dets;
  for (int i = 0; i < state.range(0); ++i) {
    const auto x = static_cast<std::int64_t>(rng() % 2000);
    const auto y = static_cast<std::int64_t>(rng() % 2000);
    dets.push_back({"object " + std::to_string(i), x, y, x + 50, y + 80});
  }
  RawExpertOutput raw;
  raw.kind = OutputKind::detections;
  raw.payload = dets;
  for (auto _ : state) benchmark::DoNotOptimize(standardize("object_detection", raw, 0));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_SerializeDetections)->RangeMultiplier(8)->Range(1, 4096);

void BM_EvalMath(benchmark::State& state) {
  std::string expr = "0";
  for (int i = 0; i < state.range(0); ++i) expr += " + " + std::to_string(i % 97) + "." + std::to_string(i % 100) + " / 3";
  for (auto _ : state) benchmark::DoNotOptimize(eval_math(expr));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_EvalMath)->RangeMultiplier(8)->Range(4, 2048);

void BM_RenderDialogue(benchmark::State& state) {
  const auto prefix = build_prefix(registry());
  auto session = new_session({});
  std::mt19937 rng(2);
  for (int i = 0; i < state.range(0); ++i) {
    const Role role = i % 5 == 0 ? Role::user : (i % 5 == 4 ? Role::assistant_final : Role::observation);
    std::optional<int> step;
    if (role == Role::observation) step = i % 5;
    session.append({role, std::string(40 + rng() % 200, 'w'), {}, step, 0});
  }
  session.append({Role::user, "How much did I spend in total?", {}, std::nullopt, 0});
  const TokenBudget budget{4096, 512};
  for (auto _ : state) benchmark::DoNotOptimize(render_dialogue(session, prefix, budget));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_RenderDialogue)->RangeMultiplier(4)->Range(8, 2048);

}  // namespace
BENCHMARK_MAIN();
