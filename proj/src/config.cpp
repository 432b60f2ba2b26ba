#include "autorag/config.hpp"

#include <charconv>
#include <functional>
#include <sstream>

#include "autorag/error.hpp"
#include "autorag/util.hpp"

#ifndef AUTORAG_DATA_DIR
#define AUTORAG_DATA_DIR "data"
#endif

namespace autorag {

namespace {

std::string fmt(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}
std::string fmt(std::uint64_t v) { return std::to_string(v); }
std::string fmt(bool v) { return v ? "true" : "false"; }

template <typename T>
T parse_number(const std::string& key, const std::string& s) {
  T v{};
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size())
    fail_usage("config: invalid value '" + s + "' for key '" + key + "'");
  return v;
}

bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  fail_usage("config: invalid boolean '" + s + "' for key '" + key + "' (expected true or false)");
}

struct Field {
  std::string key;
  std::string doc;
  std::function<void(PipelineConfig&, const std::string&)> set;
  std::function<std::string(const PipelineConfig&)> get;
};

#define AR_STR(name, member, doc)                                                   \
  Field { name, doc, [](PipelineConfig& c, const std::string& v) { c.member = v; }, \
          [](const PipelineConfig& c) { return c.member; } }
#define AR_U64(name, member, doc)                                                        \
  Field { name, doc,                                                                     \
          [](PipelineConfig& c, const std::string& v) {                                  \
            c.member = parse_number<std::uint64_t>(name, v);                             \
          },                                                                             \
          [](const PipelineConfig& c) { return fmt(static_cast<std::uint64_t>(c.member)); } }
#define AR_SIZE(name, member, doc)                                                       \
  Field { name, doc,                                                                     \
          [](PipelineConfig& c, const std::string& v) {                                  \
            c.member = static_cast<std::size_t>(parse_number<std::uint64_t>(name, v));   \
          },                                                                             \
          [](const PipelineConfig& c) { return fmt(static_cast<std::uint64_t>(c.member)); } }
#define AR_DBL(name, member, doc)                                                           \
  Field { name, doc,                                                                        \
          [](PipelineConfig& c, const std::string& v) { c.member = parse_number<double>(name, v); }, \
          [](const PipelineConfig& c) { return fmt(c.member); } }
#define AR_BOOL(name, member, doc)                                                         \
  Field { name, doc,                                                                       \
          [](PipelineConfig& c, const std::string& v) { c.member = parse_bool(name, v); }, \
          [](const PipelineConfig& c) { return fmt(c.member); } }

const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      AR_STR("corpus", corpus_path, "JSON-lines corpus {id, text, title?}"),
      AR_STR("rules", rules_path, "corruption rule table (JSON)"),
      AR_STR("synonyms", synonyms_path, "synonym table for paraphrase mutation (JSON)"),
      AR_STR("queries", queries_path, "JSON-lines queries {id, query, reference?}"),
      AR_U64("model_seed", model_seed, "seed of the frozen base model weights"),
      AR_U64("data_seed", data_seed, "seed for negative-set construction"),
      AR_U64("train_seed", train_seed, "seed for detector and policy training"),
      AR_U64("adapter_seed", adapter_seed, "seed for LoRA A initialization"),
      AR_SIZE("vocab_cap", vocab_cap, "maximum vocabulary size including specials"),
      AR_BOOL("template_question", templates.question, "allow the question template"),
      AR_BOOL("template_declarative", templates.declarative, "allow the declarative template"),
      AR_DBL("alpha", retriever.alpha, "hybrid weight on normalized BM25 (dense gets 1 - alpha)"),
      AR_DBL("rrf_k", retriever.rrf_k, "reciprocal rank fusion constant"),
      AR_SIZE("top_k", retriever.top_k, "documents kept in the retrieval trace"),
      AR_SIZE("pool_size", retriever.pool_size, "hybrid candidates re-ranked by RRF"),
      AR_BOOL("rrf_enabled", retriever.rrf_enabled, "fuse BM25 and dense rankings with RRF"),
      AR_DBL("bm25_k1", retriever.bm25.k1, "BM25 term-frequency saturation"),
      AR_DBL("bm25_b", retriever.bm25.b, "BM25 length normalization"),
      AR_SIZE("context_docs", context_docs, "retrieved documents placed in the LM context"),
      AR_BOOL("policy_frozen", policy_frozen, "keep the retrieval policy adapter frozen"),
      AR_SIZE("policy_hidden", policy_hidden, "policy adapter hidden width"),
      AR_SIZE("policy_rank", policy_rank, "policy adapter low-rank factor size"),
      AR_DBL("policy_lr", policy_lr, "policy adapter SGD learning rate"),
      AR_SIZE("policy_steps", policy_steps, "policy adapter training steps"),
      AR_DBL("policy_neg_threshold", policy_neg_threshold,
             "fraction of flagged co-occurrences that makes a document a policy negative"),
      AR_SIZE("d_model", d_model, "model width"),
      AR_SIZE("n_heads", n_heads, "attention heads"),
      AR_SIZE("n_layers", n_layers, "transformer blocks"),
      AR_SIZE("max_seq", max_seq, "maximum context plus generation length"),
      AR_SIZE("max_new_tokens", max_new_tokens, "greedy decoding budget"),
      AR_SIZE("lora_rank", lora.rank, "adapter rank r"),
      AR_DBL("lora_alpha", lora.lora_alpha, "adapter alpha"),
      Field{"lora_scale_mode", "alpha_over_rank (scale = alpha / r) or alpha (scale = alpha)",
            [](PipelineConfig& c, const std::string& v) { c.lora.scale_mode = lm::parse_scale_mode(v); },
            [](const PipelineConfig& c) { return lm::to_string(c.lora.scale_mode); }},
      AR_DBL("lora_init_std", lora.init_std, "standard deviation of the A initialization"),
      AR_BOOL("dora", lora.dora, "magnitude/direction decomposition of adapted weights"),
      AR_BOOL("qlora", qlora, "quantize the frozen base linear layers"),
      Field{"qlora_bits", "quantization bits (4 or 8)",
            [](PipelineConfig& c, const std::string& v) {
              c.qlora_bits = static_cast<int>(parse_number<std::uint64_t>("qlora_bits", v));
            },
            [](const PipelineConfig& c) { return std::to_string(c.qlora_bits); }},
      AR_SIZE("qlora_block", qlora_block, "quantization block size"),
      AR_DBL("tau", loss.tau, "adapter gate threshold; adapters switch on when p_hall > tau"),
      AR_DBL("grounded_threshold", grounded_threshold, "P+ admitted when its p_hall is below this"),
      AR_DBL("hallucinated_threshold", hallucinated_threshold, "P- admitted when its p_hall is above this"),
      AR_STR("negative_checkpoint", negative_checkpoint,
             "adapter checkpoint whose greedy answers serve as P- (empty: corrupted references)"),
      AR_DBL("lambda1", loss.lambda1, "weight of the KL term"),
      AR_DBL("lambda2", loss.lambda2, "weight of the contrastive term"),
      AR_DBL("kl_floor", loss.kl_floor, "floor applied to reference probabilities inside logs"),
      AR_DBL("contrast_clamp", loss.contrast_clamp, "contrastive term clamp magnitude"),
      AR_DBL("lr", lr, "adapter learning rate"),
      AR_DBL("adam_beta1", adam_beta1, "Adam first-moment decay"),
      AR_DBL("adam_beta2", adam_beta2, "Adam second-moment decay"),
      AR_DBL("adam_eps", adam_eps, "Adam epsilon"),
      AR_SIZE("epochs", epochs, "passes over the correction set"),
      AR_SIZE("max_steps", max_steps, "stop after this many updates (0: no limit)"),
      AR_SIZE("checkpoint_every", checkpoint_every, "updates between checkpoints"),
      AR_SIZE("negatives", negatives, "labeled pairs for detector training (0: maximum)"),
      AR_SIZE("detector_batch", detector_batch, "balanced detector batch size"),
      AR_SIZE("detector_epochs", detector_epochs, "detector training epochs"),
      AR_DBL("detector_lr", detector_lr, "detector learning rate"),
      AR_DBL("detector_l2", detector_l2, "detector L2 penalty"),
      AR_SIZE("ig_steps", ig_steps, "Integrated Gradients steps per record (0: off)"),
  };
  return f;
}

#undef AR_STR
#undef AR_U64
#undef AR_SIZE
#undef AR_DBL
#undef AR_BOOL

const Field& find_field(const std::string& key) {
  for (const auto& f : fields())
    if (f.key == key) return f;
  fail_usage("config: unknown key '" + key + "'");
}

}  // namespace

void PipelineConfig::set(const std::string& key, const std::string& value) {
  find_field(key).set(*this, trim(value));
}

std::vector<std::string> PipelineConfig::keys() {
  std::vector<std::string> out;
  for (const auto& f : fields()) out.push_back(f.key);
  return out;
}

std::string PipelineConfig::describe(const std::string& key) { return find_field(key).doc; }

PipelineConfig PipelineConfig::defaults() {
  PipelineConfig c;
  const std::string dir = AUTORAG_DATA_DIR;
  c.corpus_path = dir + "/corpus.jsonl";
  c.rules_path = dir + "/rules.json";
  c.synonyms_path = dir + "/synonyms.json";
  c.queries_path = dir + "/queries.jsonl";
  return c;
}

void PipelineConfig::validate() const {
  auto need = [](bool ok, const std::string& msg) {
    if (!ok) fail_usage("config: " + msg);
  };
  need(retriever.alpha >= 0.0 && retriever.alpha <= 1.0, "alpha must lie in [0, 1]");
  need(retriever.rrf_k > 0.0, "rrf_k must be positive");
  need(retriever.top_k >= 1, "top_k must be >= 1");
  need(retriever.pool_size >= 1, "pool_size must be >= 1");
  need(retriever.bm25.k1 >= 0.0, "bm25_k1 must be >= 0");
  need(retriever.bm25.b >= 0.0 && retriever.bm25.b <= 1.0, "bm25_b must lie in [0, 1]");
  need(context_docs >= 1 && context_docs <= retriever.top_k, "context_docs must lie in [1, top_k]");
  need(templates.question || templates.declarative, "at least one template must be enabled");
  need(policy_hidden >= 1 && policy_rank >= 1, "policy_hidden and policy_rank must be >= 1");
  need(policy_neg_threshold >= 0.0 && policy_neg_threshold <= 1.0, "policy_neg_threshold must lie in [0, 1]");
  need(d_model >= 1 && n_heads >= 1 && d_model % n_heads == 0, "d_model must be a positive multiple of n_heads");
  need(n_layers >= 1, "n_layers must be >= 1");
  need(max_new_tokens >= 1 && max_new_tokens < max_seq, "max_new_tokens must lie in [1, max_seq)");
  need(lora.rank >= 1 && lora.rank <= d_model, "lora_rank must lie in [1, d_model]");
  need(lora.lora_alpha > 0.0, "lora_alpha must be positive");
  need(lora.init_std >= 0.0, "lora_init_std must be >= 0");
  need(!(qlora && lora.dora), "qlora and dora are mutually exclusive");
  need(qlora_bits == 4 || qlora_bits == 8, "qlora_bits must be 4 or 8");
  need(qlora_block >= 1, "qlora_block must be >= 1");
  need(loss.tau >= 0.0 && loss.tau <= 1.0, "tau must lie in [0, 1]");
  need(grounded_threshold >= 0.0 && grounded_threshold <= 1.0, "grounded_threshold must lie in [0, 1]");
  need(hallucinated_threshold >= 0.0 && hallucinated_threshold <= 1.0,
       "hallucinated_threshold must lie in [0, 1]");
  need(loss.lambda1 >= 0.0 && loss.lambda2 >= 0.0, "lambda1 and lambda2 must be >= 0");
  need(loss.kl_floor > 0.0 && loss.kl_floor < 1.0, "kl_floor must lie in (0, 1)");
  need(loss.contrast_clamp > 0.0, "contrast_clamp must be positive");
  need(lr >= 0.0, "lr must be >= 0");
  need(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0,
       "adam betas must lie in [0, 1)");
  need(adam_eps > 0.0, "adam_eps must be positive");
  need(epochs >= 1, "epochs must be >= 1");
  need(checkpoint_every >= 1, "checkpoint_every must be >= 1");
  need(negatives % 2 == 0, "negatives must be even");
  need(detector_batch >= 2 && detector_batch % 2 == 0, "detector_batch must be even and >= 2");
  need(detector_epochs >= 1, "detector_epochs must be >= 1");
  need(detector_lr > 0.0, "detector_lr must be positive");
  need(detector_l2 >= 0.0, "detector_l2 must be >= 0");
}

std::string PipelineConfig::to_text() const {
  std::ostringstream s;
  for (const auto& f : fields()) s << f.key << " = " << f.get(*this) << '\n';
  return s.str();
}

std::string PipelineConfig::fingerprint() const {
  Fnv1a h;
  h.update(to_text());
  return h.hex();
}

PipelineConfig PipelineConfig::parse(const std::string& text) {
  PipelineConfig c = defaults();
  std::istringstream in(text);
  std::string line;
  std::size_t no = 0;
  while (std::getline(in, line)) {
    ++no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      fail_usage("config line " + std::to_string(no) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    try {
      c.set(key, line.substr(eq + 1));
    } catch (const Error& e) {
      throw Error(e.kind(), "config line " + std::to_string(no) + ": " + e.what());
    }
  }
  return c;
}

PipelineConfig PipelineConfig::load(const std::string& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const Error&) {
    fail_usage("config file not found: " + path);
  }
  return parse(text);
}

lm::ModelConfig model_config(const PipelineConfig& config, std::size_t vocab_size) {
  lm::ModelConfig m;
  m.vocab_size = vocab_size;
  m.d_model = config.d_model;
  m.n_heads = config.n_heads;
  m.n_layers = config.n_layers;
  m.max_seq = config.max_seq;
  m.seed = config.model_seed;
  return m;
}

}  // namespace autorag
