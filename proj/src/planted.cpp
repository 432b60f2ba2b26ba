#include "autorag/planted.hpp"

#include <sstream>

#include "autorag/error.hpp"
#include "autorag/util.hpp"

#ifndef AUTORAG_DATA_DIR
#define AUTORAG_DATA_DIR "data"
#endif

namespace autorag::planted {

PlantedConfig PlantedConfig::defaults() {
  PlantedConfig c;
  c.dir = std::string(AUTORAG_DATA_DIR) + "/planted";
  auto& p = c.pipeline;
  p = PipelineConfig::defaults();
  p.corpus_path = c.dir + "/corpus.jsonl";
  p.rules_path = c.dir + "/rules.json";
  p.synonyms_path = c.dir + "/synonyms.json";
  p.queries_path = c.dir + "/heldout.jsonl";
  p.retriever.top_k = 3;
  p.retriever.pool_size = 3;
  p.context_docs = 1;
  p.max_seq = 64;
  p.max_new_tokens = 10;
  p.d_model = 64;
  p.n_heads = 4;
  p.lora.rank = 16;
  p.lora.lora_alpha = 32.0;
  p.detector_epochs = 300;
  p.checkpoint_every = 1000;
  return c;
}

PhaseMetrics summarize(const std::vector<pipeline::RunRecord>& records) {
  PhaseMetrics m;
  std::vector<metrics::RecordMetrics> ok;
  std::size_t pass1_flags = 0;
  for (const auto& r : records) {
    if (r.status != "ok") fail_invariant("planted task: record " + r.query_id + " failed: " + r.error);
    ok.push_back(r.metrics);
    pass1_flags += r.adapter_active ? 1 : 0;
  }
  const auto rep = metrics::aggregate_report(ok);
  m.samples = rep.samples;
  m.hallucination_rate = rep.hallucination_rate;
  m.kl_drift = rep.kl_drift;
  m.pass1_flag_rate = static_cast<double>(pass1_flags) / static_cast<double>(rep.samples);
  return m;
}

PlantedResult run_planted_task(const PlantedConfig& config) {
  PipelineConfig cfg = config.pipeline;
  cfg.max_steps = config.feedback_steps;
  cfg.epochs = config.feedback_steps;  // max_steps is the binding limit
  auto index = corpus::ingest_corpus(cfg.corpus_path, {cfg.vocab_cap});
  const auto rules = prompt::load_rule_table_file(cfg.rules_path);
  const auto synonyms = prompt::load_synonym_table_file(cfg.synonyms_path);
  pipeline::Stores stores(cfg, std::move(index), {});
  PlantedResult res;

  // Detector trained on the planted corpus' own negative set.
  const auto pairs = prompt::build_negative_set(stores.index(), prompt::max_negative_set_size(stores.index(), rules), cfg.data_seed,
                                                rules, synonyms);
  const auto ds = detect::build_detection_dataset(pairs, stores.index().vocab(), stores.embeddings(),
                                                  cfg.detector_batch);
  const auto trained = detect::train_classifier(
      ds, {cfg.detector_epochs, cfg.detector_lr, cfg.train_seed, cfg.detector_l2});
  stores.set_classifier(trained.params);
  res.detector_accuracy = detect::accuracy(trained.params, ds.samples);

  const auto train_text = read_file(config.dir + "/train.jsonl");
  const auto train = pipeline::parse_queries_jsonl(train_text);
  const auto held = pipeline::load_queries(config.dir + "/heldout.jsonl");

  res.fresh = summarize(pipeline::run_generate_all(held, stores));

  // Bias injection: cross-entropy only, toward the negated completions.
  std::vector<std::string> biased;
  {
    std::istringstream in(train_text);
    std::string line;
    while (std::getline(in, line))
      if (!trim(line).empty()) biased.push_back(nlohmann::json::parse(line).at("biased").get<std::string>());
  }
  auto examples = pipeline::prepare_correction(train, stores, rules);
  if (examples.size() != biased.size()) fail_data("planted task: every training query needs a reference");
  {
    feedback::LossConfig ce_only = cfg.loss;
    ce_only.lambda1 = 0.0;
    ce_only.lambda2 = 0.0;
    std::vector<feedback::CorrectionBatch> batches;
    for (std::size_t i = 0; i < examples.size(); ++i) {
      auto target = corpus::tokenize(biased[i], stores.index().vocab());
      target.push_back(corpus::kEos);
      batches.push_back(feedback::make_correction_batch(examples[i].prompt_tokens, examples[i].docs,
                                                        target, {}, 1.0, false, false, stores.model()));
    }
    auto adapters = stores.adapters();
    auto adam = feedback::AdamState::for_adapters(adapters);
    for (std::size_t e = 0; e < config.inject_epochs; ++e)
      for (const auto& b : batches) {
        auto g = adapters.zeros_like();
        feedback::evaluate_loss(b, stores.model(), adapters, ce_only, &g);
        feedback::adam_update(adapters, g, adam, config.inject_lr);
      }
    stores.set_adapters(std::move(adapters));
  }

  res.before_records = pipeline::run_generate_all(held, stores);
  res.before = summarize(res.before_records);

  pipeline::CorrectOptions opts;
  opts.lr = config.feedback_lr;
  const auto corr = pipeline::run_correct(examples, stores, opts);
  res.updates = corr.updates;
  res.correction_trace = corr.trace;

  res.after_records = pipeline::run_generate_all(held, stores);
  res.after = summarize(res.after_records);
  return res;
}

}  // namespace autorag::planted
