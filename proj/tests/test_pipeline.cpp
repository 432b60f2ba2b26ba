#include "doctest.h"

#include <filesystem>

#include "autorag/error.hpp"
#include "autorag/pipeline.hpp"
#include "autorag/util.hpp"

#include "support.hpp"

using namespace autorag;
using namespace autorag::pipeline;
using json = nlohmann::json;

namespace {

PipelineConfig small_config() {
  auto c = PipelineConfig::defaults();
  c.detector_epochs = 20;
  c.max_new_tokens = 8;
  return c;
}

std::vector<Query> first_queries(std::size_t n) {
  auto q = load_queries(PipelineConfig::defaults().queries_path);
  q.resize(n);
  return q;
}

const Scorer kHigh = [](std::span<const TokenId>, const std::vector<std::vector<TokenId>>&) { return 0.9; };

std::vector<double> flatten(const lm::LoraAdapterStack& s) {
  std::vector<double> out;
  s.for_each_param([&](const std::string&, std::span<const double> p) { out.insert(out.end(), p.begin(), p.end()); });
  return out;
}

std::vector<json> strip_summary(std::vector<json> trace) {
  std::erase_if(trace, [](const json& e) { return e.value("event", "") == "summary"; });
  return trace;
}

}  // namespace

TEST_CASE("query parsing") {
  const auto q = parse_queries_jsonl(
      "{\"id\": \"a\", \"query\": \"Where is x?\", \"reference\": \"x is here .\"}\n"
      "\n"
      "{\"id\": \"b\", \"query\": \"Is y?\"}\n");
  REQUIRE(q.size() == 2);
  CHECK(q[0].reference == "x is here .");
  CHECK(q[1].reference.empty());
  CHECK_THROWS_AS(parse_queries_jsonl("{\"id\": \"a\"}\n"), Error);
  CHECK_THROWS_AS(parse_queries_jsonl("not json\n"), Error);
  CHECK(first_queries(3).size() == 3);
}

TEST_CASE("run_generate: gating, records and determinism") {
  auto stores = testing::trained_stores(small_config());
  const auto queries = first_queries(6);
  const auto a = run_generate_all(queries, *stores);
  const auto b = run_generate_all(queries, *stores);
  REQUIRE(a.size() == 6);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(comparable(a[i].to_json()) == comparable(b[i].to_json()));
    CHECK(a[i].status == "ok");
    CHECK(a[i].fingerprint == stores->fingerprint());
    CHECK(a[i].adapter_active == (a[i].p_hall > 0.7));
    CHECK(a[i].retrieval.size() == stores->config().retriever.top_k);
    CHECK(a[i].context_docs.size() == stores->config().context_docs);
    CHECK(a[i].flagged == (a[i].final_p_hall > 0.7));
  }

  const auto low = run_generate(queries[0], *stores, [](auto, const auto&) { return 0.7; });
  CHECK_FALSE(low.adapter_active);
  CHECK_FALSE(low.pass2.has_value());
  CHECK(low.output == low.pass1.text);

  const auto high = run_generate(queries[0], *stores, kHigh);
  CHECK(high.adapter_active);
  REQUIRE(high.pass2.has_value());
  CHECK(high.output == high.pass2->text);
  CHECK(high.flagged);
  // fresh adapters: the second pass reproduces the first exactly
  CHECK(high.pass2->tokens == high.pass1.tokens);
  CHECK(high.metrics.kl_drift == 0.0);

  const auto bad = run_generate(Query{"empty", "   ", ""}, *stores);
  CHECK(bad.status == "error");
  CHECK_FALSE(bad.error.empty());
}

TEST_CASE("records round trip and replay verification") {
  auto stores = testing::trained_stores(small_config());
  auto records = run_generate_all(first_queries(4), *stores, kHigh);
  testing::TempDir dir("records");
  write_records(dir.str("r.jsonl"), records);
  const auto back = read_records(dir.str("r.jsonl"));
  REQUIRE(back.size() == records.size());
  for (std::size_t i = 0; i < back.size(); ++i)
    CHECK(back[i].to_json() == records[i].to_json());
  CHECK(verify_gating(back).empty());

  records[2].adapter_active = false;
  CHECK(verify_gating(records) == std::vector<std::size_t>{2});
  records[2].adapter_active = true;
  records[3].p_hall = 0.7;
  CHECK(verify_gating(records) == std::vector<std::size_t>{3});
}

TEST_CASE("run_correct: saturated gate gives zero updates") {
  auto cfg = small_config();
  cfg.set("tau", "1");
  auto stores = testing::trained_stores(cfg);
  const auto rules = prompt::load_rule_table_file(cfg.rules_path);
  const auto ex = prepare_correction(first_queries(4), *stores, rules, kHigh);
  REQUIRE(ex.size() == 4);
  const auto before = flatten(stores->adapters());
  const auto r = run_correct(ex, *stores, {});
  CHECK(r.updates == 0);
  CHECK(r.skips == 4);
  CHECK(r.completed);
  CHECK(r.trace.back()["note"] == "no updates");
  CHECK(flatten(stores->adapters()) == before);
}

TEST_CASE("run_correct: frozen state and resume from a checkpoint") {
  auto cfg = small_config();
  cfg.set("checkpoint_every", "2");
  cfg.set("epochs", "2");
  const auto rules = prompt::load_rule_table_file(cfg.rules_path);
  const auto queries = first_queries(4);
  testing::TempDir dir("correct");

  auto full_stores = testing::trained_stores(cfg);
  const auto hash = full_stores->state_hash();
  const auto ex = prepare_correction(queries, *full_stores, rules, kHigh);
  CorrectOptions opts;
  opts.run_dir = dir.str("full");
  opts.lr = 1e-2;
  const auto full = run_correct(ex, *full_stores, opts);
  CHECK(full.completed);
  CHECK(full.updates == 8);
  CHECK(full_stores->state_hash() == hash);
  CHECK(flatten(full_stores->adapters()) != flatten(testing::trained_stores(cfg)->adapters()));

  opts.run_dir = dir.str("split");
  opts.stop_after_updates = 5;
  {
    auto s = testing::trained_stores(cfg);
    const auto part = run_correct(ex, *s, opts);
    CHECK_FALSE(part.completed);
    CHECK(part.updates == 5);
  }
  opts.stop_after_updates.reset();
  opts.resume = true;
  auto s = testing::trained_stores(cfg);
  const auto resumed = run_correct(ex, *s, opts);
  CHECK(resumed.completed);
  CHECK(resumed.updates == 8);
  // the update after the last checkpoint (4) is replayed, and the trace matches
  CHECK(strip_summary(resumed.trace) == strip_summary(full.trace));
  CHECK(flatten(s->adapters()) == flatten(full_stores->adapters()));
  CHECK(read_file(dir.str("split") + "/trace.jsonl") == read_file(dir.str("full") + "/trace.jsonl"));

  // a checkpoint from another configuration is refused
  auto other = cfg;
  other.set("lambda1", "0.5");
  auto os = testing::trained_stores(other);
  try {
    run_correct(ex, *os, opts);
    FAIL("expected data error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::data);
  }
}

TEST_CASE("negatives from an earlier checkpoint") {
  auto cfg = small_config();
  cfg.set("checkpoint_every", "1");
  const auto rules = prompt::load_rule_table_file(cfg.rules_path);
  const auto queries = first_queries(3);
  testing::TempDir dir("earlier");
  auto stores = testing::trained_stores(cfg);
  const auto ex = prepare_correction(queries, *stores, rules, kHigh);
  CorrectOptions opts;
  opts.run_dir = dir.str();
  opts.lr = 5e-2;
  run_correct(ex, *stores, opts);
  const auto step = dir.str("checkpoints/step_000002.json");
  REQUIRE(std::filesystem::exists(step));

  auto from_ckpt = cfg;
  from_ckpt.negative_checkpoint = step;
  auto fresh = testing::trained_stores(from_ckpt);
  const auto earlier = load_adapter_checkpoint(json::parse(read_file(step)).at("adapters"), *fresh);
  const auto neg = prepare_correction(queries, *fresh, rules, kHigh);
  REQUIRE(neg.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    const auto want = lm::decode_greedy(neg[i].prompt_tokens, neg[i].docs, fresh->model(), &earlier, true,
                                        from_ckpt.max_new_tokens);
    CHECK(neg[i].negative == want.tokens);
    CHECK(neg[i].negative_p_hall == 0.9);
    CHECK(neg[i].target == ex[i].target);
  }

  auto missing = cfg;
  missing.negative_checkpoint = dir.str("nope.json");
  auto ms = testing::trained_stores(missing);
  CHECK_THROWS_AS(prepare_correction(queries, *ms, rules, kHigh), Error);
  auto other = from_ckpt;
  other.model_seed = 9;
  auto os = testing::trained_stores(other);
  CHECK_THROWS_AS(prepare_correction(queries, *os, rules, kHigh), Error);
}

TEST_CASE("adapter checkpoint is bound to the base model") {
  auto stores = testing::trained_stores(small_config());
  const auto j = adapter_checkpoint(*stores);
  const auto back = load_adapter_checkpoint(j, *stores);
  CHECK(flatten(back) == flatten(stores->adapters()));

  auto cfg = small_config();
  cfg.model_seed = 77;
  auto other = testing::trained_stores(cfg);
  CHECK_THROWS_AS(load_adapter_checkpoint(j, *other), Error);
}
