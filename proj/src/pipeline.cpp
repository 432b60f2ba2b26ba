#include "autorag/pipeline.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "autorag/divergence.hpp"
#include "autorag/error.hpp"
#include "autorag/util.hpp"

namespace autorag::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

// --- queries ----------------------------------------------------------------

std::vector<Query> parse_queries_jsonl(std::string_view content) {
  std::vector<Query> out;
  std::istringstream in{std::string(content)};
  std::string line;
  std::size_t no = 0;
  while (std::getline(in, line)) {
    ++no;
    if (trim(line).empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      fail_data("queries line " + std::to_string(no) + ": malformed JSON (" + e.what() + ")");
    }
    if (!j.is_object() || !j.contains("id") || !j.contains("query") || !j["id"].is_string() ||
        !j["query"].is_string())
      fail_data("queries line " + std::to_string(no) + ": expected string fields id and query");
    Query q{j["id"].get<std::string>(), j["query"].get<std::string>(), ""};
    if (j.contains("reference") && j["reference"].is_string()) q.reference = j["reference"].get<std::string>();
    out.push_back(std::move(q));
  }
  return out;
}

std::vector<Query> load_queries(const std::string& path) { return parse_queries_jsonl(read_file(path)); }

// --- stores -----------------------------------------------------------------

Stores::Stores(const PipelineConfig& config, corpus::CorpusIndex index,
               detect::ClassifierParams classifier)
    : config_(config), index_(std::move(index)), classifier_(std::move(classifier)) {
  config_.validate();
  if (index_.size() == 0) fail_data("pipeline: the corpus index is empty");
  base_ = lm::ToyTransformer::create(model_config(config_, index_.vocab().size()));
  if (config_.qlora) qlora_ = base_.quantized(config_.qlora_bits, config_.qlora_block);
  retriever_ = std::make_unique<retrieval::HybridRetriever>(index_, base_.token_embedding(),
                                                            config_.retriever);
  const std::size_t fdim = 2 * config_.d_model + 1;
  if (classifier_.feature_dim() == 0) classifier_ = detect::ClassifierParams::zeros(fdim);
  if (classifier_.feature_dim() != fdim)
    fail_data("pipeline: classifier expects " + std::to_string(classifier_.feature_dim()) +
              " features but the model produces " + std::to_string(fdim));
  adapters_ = lm::create_adapters(model(), config_.lora, config_.adapter_seed);
  Fnv1a h;
  h.update(config_.fingerprint());
  for (const auto& t : index_.vocab().tokens()) {
    h.update(t);
    h.update(std::string_view("\n"));
  }
  h.update(model().fingerprint());
  fingerprint_ = h.hex();
}

void Stores::set_adapters(lm::LoraAdapterStack a) {
  if (a.n_layers() != config_.n_layers || a.parameter_count() != adapters_.parameter_count())
    fail_data("pipeline: adapter stack does not match the model");
  adapters_ = std::move(a);
}

std::string Stores::state_hash() const {
  Fnv1a h;
  h.update(base_.weight_hash());
  if (qlora_) h.update(qlora_->weight_hash());
  h.update(index_.serialize());
  return h.hex();
}

// --- records ----------------------------------------------------------------

namespace {

json pass_to_json(const PassResult& p) {
  return {{"tokens", p.tokens}, {"text", p.text}, {"p_hall", p.p_hall}};
}

PassResult pass_from_json(const json& j) {
  return {j.at("tokens").get<std::vector<TokenId>>(), j.at("text").get<std::string>(),
          j.at("p_hall").get<double>()};
}

json score_to_json(const retrieval::RetrievalScore& s) {
  return {{"doc_id", s.doc_id}, {"bm25", s.bm25},     {"bm25_norm", s.bm25_norm}, {"dense", s.dense},
          {"hybrid", s.hybrid}, {"rrf", s.rrf},       {"ranks", s.ranks}};
}

retrieval::RetrievalScore score_from_json(const json& j) {
  retrieval::RetrievalScore s;
  s.doc_id = j.at("doc_id").get<std::string>();
  s.bm25 = j.at("bm25").get<double>();
  s.bm25_norm = j.at("bm25_norm").get<double>();
  s.dense = j.at("dense").get<double>();
  s.hybrid = j.at("hybrid").get<double>();
  s.rrf = j.at("rrf").get<double>();
  s.ranks = j.at("ranks").get<std::map<std::string, int>>();
  return s;
}

prompt::TemplateId parse_template(const std::string& s) {
  if (s == "question") return prompt::TemplateId::question;
  if (s == "declarative") return prompt::TemplateId::declarative;
  fail_data("record: unknown template '" + s + "'");
}

prompt::Provenance parse_provenance(const std::string& s) {
  if (s == "rule") return prompt::Provenance::rule;
  if (s == "template") return prompt::Provenance::template_only;
  fail_data("record: unknown provenance '" + s + "'");
}

}  // namespace

json RunRecord::to_json() const {
  json j;
  j["query_id"] = query_id;
  j["prompt"] = {{"raw", prompt.raw},
                 {"rewritten", prompt.rewritten},
                 {"template", prompt::to_string(prompt.template_id)},
                 {"provenance", prompt::to_string(prompt.provenance)}};
  json rs = json::array();
  for (const auto& s : retrieval) rs.push_back(score_to_json(s));
  j["retrieval"] = std::move(rs);
  j["policy_probs"] = policy_probs;
  j["context_docs"] = context_docs;
  j["pass1"] = pass_to_json(pass1);
  j["pass2"] = pass2 ? pass_to_json(*pass2) : json(nullptr);
  j["p_hall"] = p_hall;
  j["tau"] = tau;
  j["adapter_active"] = adapter_active;
  j["output"] = output;
  j["final_p_hall"] = final_p_hall;
  j["flagged"] = flagged;
  j["loss"] = loss ? loss->to_json() : json(nullptr);
  j["metrics"] = metrics.to_json();
  j["attributions"] = attributions;
  j["status"] = status;
  j["error"] = error;
  j["timestamp"] = timestamp;
  j["fingerprint"] = fingerprint;
  return j;
}

RunRecord RunRecord::from_json(const json& j) {
  RunRecord r;
  r.query_id = j.at("query_id").get<std::string>();
  const auto& p = j.at("prompt");
  r.prompt = {p.at("raw").get<std::string>(), p.at("rewritten").get<std::string>(),
              parse_template(p.at("template").get<std::string>()),
              parse_provenance(p.at("provenance").get<std::string>())};
  for (const auto& s : j.at("retrieval")) r.retrieval.push_back(score_from_json(s));
  r.policy_probs = j.at("policy_probs").get<Vec>();
  r.context_docs = j.at("context_docs").get<std::vector<std::string>>();
  r.pass1 = pass_from_json(j.at("pass1"));
  if (!j.at("pass2").is_null()) r.pass2 = pass_from_json(j["pass2"]);
  r.p_hall = j.at("p_hall").get<double>();
  r.tau = j.at("tau").get<double>();
  r.adapter_active = j.at("adapter_active").get<bool>();
  r.output = j.at("output").get<std::string>();
  r.final_p_hall = j.at("final_p_hall").get<double>();
  r.flagged = j.at("flagged").get<bool>();
  if (!j.at("loss").is_null()) r.loss = feedback::LossBreakdown::from_json(j["loss"]);
  r.metrics = metrics::RecordMetrics::from_json(j.at("metrics"));
  r.attributions = j.at("attributions").get<Vec>();
  r.status = j.at("status").get<std::string>();
  r.error = j.at("error").get<std::string>();
  r.timestamp = j.at("timestamp").get<std::string>();
  r.fingerprint = j.at("fingerprint").get<std::string>();
  return r;
}

json comparable(const json& record) {
  json j = record;
  j.erase("timestamp");
  return j;
}

// --- generation -------------------------------------------------------------

namespace {

struct Prepared {
  prompt::StructuredPrompt prompt;
  std::vector<retrieval::RetrievalScore> retrieval;
  Vec policy_probs;
  std::vector<TokenId> prompt_tokens;
  std::vector<std::vector<TokenId>> docs;
  std::vector<std::string> doc_ids;
};

Prepared prepare(const std::string& text, const Stores& stores) {
  const auto& cfg = stores.config();
  Prepared p;
  p.prompt = prompt::rewrite_prompt(text, cfg.templates);
  p.retrieval = stores.retriever().retrieve(p.prompt);
  p.prompt_tokens = corpus::tokenize(p.prompt.rewritten, stores.index().vocab());

  std::vector<std::size_t> order(p.retrieval.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const auto& policy = stores.policy();
  if (policy && !cfg.policy_frozen) {
    const auto terms = retrieval::content_tokens(p.prompt_tokens);
    if (!terms.empty()) {
      const Vec q = retrieval::embed_text(terms, stores.embeddings());
      Vec logits;
      for (const auto& s : p.retrieval) {
        const Vec& d = stores.retriever().doc_embedding(s.doc);
        logits.push_back(d.empty() ? -1e9 : retrieval::policy_logit(retrieval::policy_features(q, d), *policy));
      }
      p.policy_probs = softmax(logits);
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return p.policy_probs[a] > p.policy_probs[b];
      });
    }
  }
  const std::size_t k = std::min(cfg.context_docs, order.size());
  for (std::size_t i = 0; i < k; ++i) {
    const auto& s = p.retrieval[order[i]];
    p.docs.push_back(stores.index().document(s.doc).tokens);
    p.doc_ids.push_back(s.doc_id);
  }
  return p;
}

Scorer default_scorer(const Stores& stores) {
  return [&stores](std::span<const TokenId> gen, const std::vector<std::vector<TokenId>>& docs) {
    return detect::predict(detect::featurize(gen, docs, stores.embeddings()), stores.classifier());
  };
}

std::string output_text(std::span<const TokenId> tokens, const corpus::Vocabulary& vocab) {
  std::vector<TokenId> keep;
  for (TokenId t : tokens)
    if (t != corpus::kEos) keep.push_back(t);
  return corpus::detokenize(keep, vocab);
}

}  // namespace

RunRecord run_generate(const Query& query, const Stores& stores, const Scorer& scorer) {
  const auto& cfg = stores.config();
  const auto& vocab = stores.index().vocab();
  const Scorer score = scorer ? scorer : default_scorer(stores);
  RunRecord r;
  r.query_id = query.id;
  r.tau = cfg.tau();
  r.fingerprint = stores.fingerprint();
  r.metrics.fingerprint = stores.fingerprint();
  r.prompt.raw = query.text;
  try {
    auto p = prepare(query.text, stores);
    r.prompt = p.prompt;
    r.retrieval = p.retrieval;
    r.policy_probs = p.policy_probs;
    r.context_docs = p.doc_ids;

    const auto& model = stores.model();
    const auto* adapters = &stores.adapters();
    auto first = lm::decode_greedy(p.prompt_tokens, p.docs, model, adapters, false, cfg.max_new_tokens);
    r.pass1 = {first.tokens, output_text(first.tokens, vocab), score(first.tokens, p.docs)};
    r.p_hall = r.pass1.p_hall;
    r.adapter_active = lm::adapter_gate(r.p_hall, cfg.tau());

    std::optional<lm::DecodeResult> second;
    if (r.adapter_active) {
      second = lm::decode_greedy(p.prompt_tokens, p.docs, model, adapters, true, cfg.max_new_tokens);
      r.pass2 = PassResult{second->tokens, output_text(second->tokens, vocab), score(second->tokens, p.docs)};
    }
    const lm::DecodeResult& fin = second ? *second : first;
    const PassResult& fin_pass = r.pass2 ? *r.pass2 : r.pass1;
    r.output = fin_pass.text;
    r.final_p_hall = fin_pass.p_hall;
    r.flagged = fin_pass.p_hall > cfg.tau();

    const auto p_ret = lm::teacher_forced(fin.context, fin.tokens, model, nullptr, false);
    r.metrics.flagged = r.flagged;
    r.metrics.adapter_active = r.adapter_active;
    r.metrics.kl_drift = sequence_kl(fin.distributions, p_ret, cfg.loss.kl_floor);
    r.metrics.jsd = detect::semantic_drift(fin.distributions, p_ret).jsd;
    r.metrics.attention_entropy = detect::attention_entropy(fin.trace);
    if (!query.reference.empty()) {
      const auto ref = retrieval::content_tokens(corpus::tokenize(query.reference, vocab));
      if (!ref.empty()) r.metrics.rouge_l = metrics::rouge_l(retrieval::content_tokens(fin.tokens), ref);
    }
    if (cfg.ig_steps > 0)
      r.attributions = detect::lm_token_attributions(fin.context, fin.tokens, model, adapters,
                                                     r.adapter_active, cfg.ig_steps)
                           .per_token;
  } catch (const std::exception& e) {
    r.status = "error";
    r.error = e.what();
  }
  r.timestamp = utc_timestamp();
  return r;
}

std::vector<RunRecord> run_generate_all(const std::vector<Query>& queries, const Stores& stores,
                                        const Scorer& scorer) {
  std::vector<RunRecord> out(queries.size());
  const long n = static_cast<long>(queries.size());
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = run_generate(queries[static_cast<std::size_t>(i)], stores, scorer);
  return out;
}

std::vector<std::size_t> verify_gating(const std::vector<RunRecord>& records) {
  std::vector<std::size_t> bad;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (r.status != "ok") continue;
    if (r.adapter_active != lm::adapter_gate(r.p_hall, r.tau) || r.pass2.has_value() != r.adapter_active)
      bad.push_back(i);
  }
  return bad;
}

// --- correction -------------------------------------------------------------

std::vector<CorrectionExample> prepare_correction(const std::vector<Query>& queries,
                                                  const Stores& stores,
                                                  const std::vector<prompt::CorruptionRule>& rules,
                                                  const Scorer& scorer) {
  const auto& cfg = stores.config();
  const auto& vocab = stores.index().vocab();
  const Scorer score = scorer ? scorer : default_scorer(stores);
  std::optional<lm::LoraAdapterStack> earlier;
  if (!cfg.negative_checkpoint.empty()) {
    json j;
    try {
      j = json::parse(read_file(cfg.negative_checkpoint));
    } catch (const json::exception& e) {
      fail_data(cfg.negative_checkpoint + ": " + e.what());
    }
    // step files wrap the adapter checkpoint together with optimizer state
    earlier = load_adapter_checkpoint(j.contains("visit") ? j.at("adapters") : j, stores);
  }
  std::vector<CorrectionExample> out;
  for (std::size_t qi = 0; qi < queries.size(); ++qi) {
    const auto& q = queries[qi];
    if (q.reference.empty()) continue;
    auto p = prepare(q.text, stores);
    CorrectionExample ex;
    ex.query = q;
    ex.prompt = p.prompt;
    ex.prompt_tokens = p.prompt_tokens;
    ex.docs = p.docs;
    ex.doc_ids = p.doc_ids;
    const auto first = lm::decode_greedy(p.prompt_tokens, p.docs, stores.model(), &stores.adapters(),
                                         false, cfg.max_new_tokens);
    ex.p_hall = score(first.tokens, p.docs);
    ex.target = corpus::tokenize(q.reference, vocab);
    ex.target.push_back(corpus::kEos);
    const std::size_t ctx = lm::build_context(p.prompt_tokens, p.docs).size();
    if (ctx + ex.target.size() > cfg.max_seq)
      fail_data("correction example " + q.id + ": context of " + std::to_string(ctx) +
                " tokens plus a reference of " + std::to_string(ex.target.size()) +
                " exceeds max_seq " + std::to_string(cfg.max_seq));
    ex.target_p_hall = score(ex.target, p.docs);
    if (earlier) {
      ex.negative = lm::decode_greedy(p.prompt_tokens, p.docs, stores.model(), &*earlier, true,
                                      cfg.max_new_tokens).tokens;
    } else if (auto c = prompt::corrupt_rule_based(q.reference, rules, derive_seed(cfg.data_seed, qi))) {
      ex.negative = corpus::tokenize(c->text, vocab);
      ex.negative.push_back(corpus::kEos);
    }
    if (!ex.negative.empty()) ex.negative_p_hall = score(ex.negative, p.docs);
    out.push_back(std::move(ex));
  }
  return out;
}

namespace {

std::string checkpoint_name(std::size_t updates) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "step_%06zu.json", updates);
  return buf;
}

std::optional<fs::path> latest_checkpoint(const fs::path& dir) {
  if (!fs::exists(dir)) return std::nullopt;
  std::optional<fs::path> best;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (name.rfind("step_", 0) != 0 || e.path().extension() != ".json") continue;
    if (!best || name > best->filename().string()) best = e.path();
  }
  return best;
}

}  // namespace

CorrectResult run_correct(const std::vector<CorrectionExample>& examples, Stores& stores,
                          const CorrectOptions& options) {
  const auto& cfg = stores.config();
  const double lr = options.lr.value_or(cfg.lr);
  const std::string before = stores.state_hash();
  const auto& model = stores.model();

  std::vector<feedback::CorrectionBatch> batches;
  for (const auto& ex : examples)
    batches.push_back(feedback::make_correction_batch(
        ex.prompt_tokens, ex.docs, ex.target, ex.negative, ex.p_hall,
        ex.target_p_hall < cfg.grounded_threshold,
        !ex.negative.empty() && ex.negative_p_hall > cfg.hallucinated_threshold, model));

  lm::LoraAdapterStack adapters = stores.adapters();
  auto adam = feedback::AdamState::for_adapters(adapters);
  adam.beta1 = cfg.adam_beta1;
  adam.beta2 = cfg.adam_beta2;
  adam.eps = cfg.adam_eps;

  CorrectResult res;
  std::size_t visit = 0;
  const bool persist = !options.run_dir.empty();
  const fs::path dir = options.run_dir;
  const fs::path trace_path = dir / "trace.jsonl";
  const fs::path ckpt_dir = dir / "checkpoints";

  if (persist) fs::create_directories(ckpt_dir);
  if (options.resume) {
    if (!persist) fail_usage("correct: resume requires a run directory");
    if (auto ck = latest_checkpoint(ckpt_dir)) {
      const json j = json::parse(read_file(ck->string()));
      if (j.at("fingerprint").get<std::string>() != stores.fingerprint())
        fail_data("correct: checkpoint " + ck->string() + " was written for a different configuration or model");
      adapters = load_adapter_checkpoint(j.at("adapters"), stores);
      adam = feedback::AdamState::from_json(j.at("optimizer"), adapters);
      visit = j.at("visit").get<std::size_t>();
      res.updates = j.at("updates").get<std::size_t>();
      res.skips = j.at("skips").get<std::size_t>();
    }
    std::string kept;
    if (fs::exists(trace_path)) {
      std::istringstream in(read_file(trace_path.string()));
      std::string line;
      while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        json e = json::parse(line);
        if (e.contains("visit") && e["visit"].get<std::size_t>() < visit) {
          res.trace.push_back(e);
          kept += line + "\n";
        }
      }
    }
    write_file(trace_path.string(), kept);
  } else if (persist) {
    write_file(trace_path.string(), "");
    for (const auto& e : fs::directory_iterator(ckpt_dir)) fs::remove(e.path());
  }

  auto log = [&](const json& e) {
    res.trace.push_back(e);
    if (persist) append_line(trace_path.string(), e.dump());
  };

  const std::size_t total = examples.empty() ? 0 : cfg.epochs * examples.size();
  bool interrupted = false;
  for (; visit < total; ++visit) {
    if (cfg.max_steps && res.updates >= cfg.max_steps) break;
    if (options.stop_after_updates && res.updates >= *options.stop_after_updates) {
      interrupted = true;
      break;
    }
    const std::size_t i = visit % examples.size();
    const auto step = feedback::feedback_step(batches[i], model, adapters, adam, lr, cfg.loss);
    json e{{"visit", visit},
           {"epoch", visit / examples.size()},
           {"query_id", examples[i].query.id},
           {"p_hall", batches[i].p_hall},
           {"use_positive", batches[i].use_positive},
           {"use_negative", batches[i].use_negative}};
    if (step.applied) {
      ++res.updates;
      e["event"] = "update";
      e["loss"] = step.loss.to_json();
      e["grad_norm"] = step.grad_norm;
      e["updates"] = res.updates;
    } else {
      ++res.skips;
      e["event"] = "skip";
      e["reason"] = step.skip_reason;
    }
    log(e);
    if (persist && step.applied && res.updates % cfg.checkpoint_every == 0) {
      stores.set_adapters(adapters);
      json ck{{"fingerprint", stores.fingerprint()},
              {"visit", visit + 1},
              {"updates", res.updates},
              {"skips", res.skips},
              {"adapters", adapter_checkpoint(stores)},
              {"optimizer", adam.to_json()}};
      write_file((ckpt_dir / checkpoint_name(res.updates)).string(), ck.dump());
    }
  }
  stores.set_adapters(adapters);
  if (stores.state_hash() != before)
    fail_invariant("correct: frozen base weights or corpus index changed during correction");
  if (interrupted) return res;

  res.completed = true;
  json summary{{"event", "summary"}, {"updates", res.updates}, {"skips", res.skips}};
  if (res.updates == 0) summary["note"] = "no updates";
  log(summary);
  if (persist) write_file((dir / "adapters.json").string(), adapter_checkpoint(stores).dump());
  return res;
}

std::optional<retrieval::PolicyAdapterParams> train_policy_from_examples(
    const std::vector<CorrectionExample>& examples, const Stores& stores) {
  const auto& cfg = stores.config();
  std::map<std::string, std::pair<std::size_t, std::size_t>> counts;  // flagged, total
  for (const auto& ex : examples)
    for (const auto& id : ex.doc_ids) {
      auto& c = counts[id];
      c.first += lm::adapter_gate(ex.p_hall, cfg.tau()) ? 1 : 0;
      ++c.second;
    }
  auto is_negative = [&](const std::string& id) {
    const auto& c = counts.at(id);
    return static_cast<double>(c.first) >= cfg.policy_neg_threshold * static_cast<double>(c.second);
  };
  std::vector<retrieval::PolicyExample> train;
  for (const auto& ex : examples) {
    const auto terms = retrieval::content_tokens(ex.prompt_tokens);
    if (terms.empty()) continue;
    const Vec q = retrieval::embed_text(terms, stores.embeddings());
    std::optional<Vec> pos;
    std::vector<Vec> negs;
    for (const auto& id : ex.doc_ids) {
      const Vec& d = stores.retriever().doc_embedding(*stores.index().find(id));
      if (d.empty()) continue;
      if (is_negative(id))
        negs.push_back(d);
      else if (!pos)
        pos = d;
    }
    if (pos && !negs.empty()) train.push_back({q, *pos, negs});
  }
  if (train.empty()) return std::nullopt;
  auto params = retrieval::make_policy_adapter(2 * cfg.d_model, cfg.policy_hidden, cfg.policy_rank,
                                               cfg.train_seed);
  params.frozen = false;
  retrieval::train_policy(params, train, cfg.policy_lr, cfg.policy_steps);
  return params;
}

// --- persistence ------------------------------------------------------------

json adapter_checkpoint(const Stores& stores) {
  return {{"fingerprint", stores.fingerprint()},
          {"base_fingerprint", stores.model().fingerprint()},
          {"adapters", feedback::adapters_to_json(stores.adapters())}};
}

lm::LoraAdapterStack load_adapter_checkpoint(const json& j, const Stores& stores) {
  if (j.at("base_fingerprint").get<std::string>() != stores.model().fingerprint())
    fail_data("adapter checkpoint was trained against a different base model");
  auto a = feedback::adapters_from_json(j.at("adapters"));
  if (a.n_layers() != stores.config().n_layers || a.config().rank != stores.config().lora.rank ||
      a.config().dora != stores.config().lora.dora)
    fail_data("adapter checkpoint does not match the configured adapter shape");
  return a;
}

json policy_to_json(const retrieval::PolicyAdapterParams& p) {
  return {{"w1", lm::matrix_to_json(p.w1)}, {"a1", lm::matrix_to_json(p.a1)},
          {"b1", lm::matrix_to_json(p.b1)}, {"w2", p.w2},
          {"frozen", p.frozen}};
}

retrieval::PolicyAdapterParams policy_from_json(const json& j) {
  return {lm::matrix_from_json(j.at("w1")), lm::matrix_from_json(j.at("a1")),
          lm::matrix_from_json(j.at("b1")), j.at("w2").get<Vec>(), j.at("frozen").get<bool>()};
}

std::vector<RunRecord> read_records(const std::string& path) {
  std::vector<RunRecord> out;
  std::istringstream in(read_file(path));
  std::string line;
  std::size_t no = 0;
  while (std::getline(in, line)) {
    ++no;
    if (trim(line).empty()) continue;
    try {
      out.push_back(RunRecord::from_json(json::parse(line)));
    } catch (const json::exception& e) {
      fail_data(path + " line " + std::to_string(no) + ": " + e.what());
    }
  }
  return out;
}

void write_records(const std::string& path, const std::vector<RunRecord>& records) {
  for (const auto& r : records) append_line(path, r.to_json().dump());
}

}  // namespace autorag::pipeline
