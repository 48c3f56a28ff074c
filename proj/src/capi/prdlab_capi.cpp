#include "prdlab.h"

#include <cstring>
#include <exception>
#include <memory>
#include <new>
#include <sstream>
#include <string>

#include "json.hpp"
#include "prdlab/checkpoint.hpp"
#include "prdlab/error.hpp"
#include "prdlab/evaluation.hpp"
#include "prdlab/gradcheck_suite.hpp"
#include "prdlab/perturb.hpp"
#include "prdlab/synthetic.hpp"
#include "prdlab/training.hpp"

struct prdlab_corpus {
  std::vector<prdlab::SyntheticPair> pairs;
};

struct prdlab_model {
  explicit prdlab_model(prdlab::Model m) : model(std::move(m)) {}
  prdlab::Model model;
};

struct prdlab_trainer {
  std::unique_ptr<prdlab::Trainer> trainer;
};

namespace {

using nlohmann::json;

thread_local std::string g_last_error;

prdlab_status fail(prdlab_status status, std::string message) {
  g_last_error = std::move(message);
  return status;
}

// Runs `body`, translating exceptions into status codes.
template <typename F>
prdlab_status guarded(F&& body) {
  try {
    g_last_error.clear();
    body();
    return PRDLAB_OK;
  } catch (const prdlab::InvalidArgument& e) {
    return fail(PRDLAB_ERR_INVALID_ARGUMENT, e.what());
  } catch (const prdlab::RuntimeError& e) {
    return fail(PRDLAB_ERR_RUNTIME, e.what());
  } catch (const json::exception& e) {
    return fail(PRDLAB_ERR_INVALID_ARGUMENT, e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return fail(PRDLAB_ERR_RUNTIME, e.what());
  } catch (const std::bad_alloc&) {
    return fail(PRDLAB_ERR_RUNTIME, "out of memory");
  } catch (const std::exception& e) {
    return fail(PRDLAB_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(PRDLAB_ERR_INTERNAL, "unknown error");
  }
}

void require(bool ok, const char* what) {
  if (!ok) throw prdlab::InvalidArgument(what);
}

char* dup_string(const std::string& s) {
  auto* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

json perturbation_set_json(const prdlab::PerturbationSet& set) {
  json variants = json::array();
  for (const auto& v : set.variants) {
    variants.push_back({{"rule", prdlab::rule_name(v.rule)},
                        {"tokens", v.tokens},
                        {"text", prdlab::join_tokens(v.tokens)},
                        {"degenerate", v.degenerate},
                        {"partial", v.partial}});
  }
  json pos = json::array();
  for (auto tag : set.original.pos) pos.push_back(prdlab::pos_name(tag));
  return {{"seed", set.seed}, {"original", set.original.tokens}, {"pos", pos}, {"variants", variants}};
}

json structure_json(const prdlab::StructureEvalResult& r, std::uint64_t seed) {
  json confusion = json::object();
  for (std::size_t i = 0; i < prdlab::kRuleCount; ++i) {
    confusion[std::string(prdlab::rule_name(prdlab::kAllRules[i]))] = r.confusion[i];
  }
  return {{"seed", seed},
          {"n_samples", r.n_samples},
          {"n_correct", r.n_correct},
          {"n_skipped", r.n_skipped},
          {"accuracy", r.accuracy},
          {"random_baseline", r.random_baseline},
          {"random_baseline_sd", r.random_baseline_sd},
          {"confusion", confusion},
          {"warnings", r.warnings}};
}

}  // namespace

extern "C" {

const char* prdlab_version(void) { return PRDLAB_VERSION; }

const char* prdlab_last_error(void) { return g_last_error.c_str(); }

void prdlab_string_free(char* s) { std::free(s); }

prdlab_status prdlab_default_config_json(char** out_json) {
  return guarded([&] {
    require(out_json != nullptr, "out_json is null");
    *out_json = dup_string(prdlab::config_to_json(prdlab::TrainConfig{}).dump(2));
  });
}

prdlab_status prdlab_corpus_generate(size_t n, size_t side, uint64_t seed, uint64_t first_id, prdlab_corpus** out) {
  return guarded([&] {
    require(out != nullptr, "out is null");
    auto corpus = std::make_unique<prdlab_corpus>();
    corpus->pairs = prdlab::generate_corpus(n, side, seed, first_id);
    *out = corpus.release();
  });
}

prdlab_status prdlab_corpus_load(const char* jsonl_path, prdlab_corpus** out) {
  return guarded([&] {
    require(jsonl_path != nullptr && out != nullptr, "null argument");
    auto corpus = std::make_unique<prdlab_corpus>();
    corpus->pairs = prdlab::load_corpus(jsonl_path);
    *out = corpus.release();
  });
}

prdlab_status prdlab_corpus_save(const prdlab_corpus* corpus, const char* dir) {
  return guarded([&] {
    require(corpus != nullptr && dir != nullptr, "null argument");
    prdlab::save_corpus(dir, corpus->pairs);
  });
}

prdlab_status prdlab_corpus_slice(const prdlab_corpus* corpus, size_t begin, size_t count, prdlab_corpus** out) {
  return guarded([&] {
    require(corpus != nullptr && out != nullptr, "null argument");
    require(count > 0, "slice is empty");
    require(begin <= corpus->pairs.size() && count <= corpus->pairs.size() - begin, "slice out of range");
    auto slice = std::make_unique<prdlab_corpus>();
    slice->pairs.assign(corpus->pairs.begin() + static_cast<std::ptrdiff_t>(begin),
                        corpus->pairs.begin() + static_cast<std::ptrdiff_t>(begin + count));
    *out = slice.release();
  });
}

size_t prdlab_corpus_size(const prdlab_corpus* corpus) { return corpus == nullptr ? 0 : corpus->pairs.size(); }

prdlab_status prdlab_corpus_report(const prdlab_corpus* corpus, size_t index, char** out) {
  return guarded([&] {
    require(corpus != nullptr && out != nullptr, "null argument");
    require(index < corpus->pairs.size(), "index out of range");
    *out = dup_string(corpus->pairs[index].report);
  });
}

void prdlab_corpus_free(prdlab_corpus* corpus) { delete corpus; }

prdlab_status prdlab_perturb_json(const char* report, uint64_t seed, char** out_json) {
  return guarded([&] {
    require(report != nullptr && out_json != nullptr, "null argument");
    const auto set = prdlab::generate_set(prdlab::pos_tag(prdlab::tokenize(report)), seed);
    *out_json = dup_string(perturbation_set_json(set).dump());
  });
}

prdlab_status prdlab_trainer_create(const char* config_json, const prdlab_corpus* corpus, prdlab_trainer** out) {
  return guarded([&] {
    require(corpus != nullptr && out != nullptr, "null argument");
    prdlab::TrainConfig config;
    if (config_json != nullptr) prdlab::apply_config(config, json::parse(config_json));
    auto t = std::make_unique<prdlab_trainer>();
    t->trainer = std::make_unique<prdlab::Trainer>(config, corpus->pairs);
    *out = t.release();
  });
}

prdlab_status prdlab_trainer_resume(const char* checkpoint_path, const prdlab_corpus* corpus, prdlab_trainer** out) {
  return guarded([&] {
    require(checkpoint_path != nullptr && corpus != nullptr && out != nullptr, "null argument");
    const auto state = prdlab::load_state(checkpoint_path);
    auto t = std::make_unique<prdlab_trainer>();
    t->trainer = std::make_unique<prdlab::Trainer>(state, corpus->pairs);
    *out = t.release();
  });
}

prdlab_status prdlab_trainer_run_epoch(prdlab_trainer* trainer, char** out_jsonl) {
  return guarded([&] {
    require(trainer != nullptr, "trainer is null");
    const auto rows = trainer->trainer->run_epoch();
    if (out_jsonl != nullptr) {
      std::ostringstream lines;
      for (const auto& row : rows) lines << prdlab::metrics_to_json(row).dump() << '\n';
      *out_jsonl = dup_string(lines.str());
    }
  });
}

size_t prdlab_trainer_epochs_done(const prdlab_trainer* trainer) {
  return trainer == nullptr ? 0 : trainer->trainer->epochs_done();
}

size_t prdlab_trainer_epochs_total(const prdlab_trainer* trainer) {
  return trainer == nullptr ? 0 : trainer->trainer->config().epochs;
}

prdlab_status prdlab_trainer_config_json(const prdlab_trainer* trainer, char** out_json) {
  return guarded([&] {
    require(trainer != nullptr && out_json != nullptr, "null argument");
    *out_json = dup_string(prdlab::config_to_json(trainer->trainer->config()).dump(2));
  });
}

prdlab_status prdlab_trainer_save_checkpoint(const prdlab_trainer* trainer, const char* path) {
  return guarded([&] {
    require(trainer != nullptr && path != nullptr, "null argument");
    prdlab::save_state(path, trainer->trainer->state());
  });
}

prdlab_status prdlab_trainer_model(const prdlab_trainer* trainer, prdlab_model** out) {
  return guarded([&] {
    require(trainer != nullptr && out != nullptr, "null argument");
    *out = new prdlab_model(trainer->trainer->model().clone());
  });
}

void prdlab_trainer_free(prdlab_trainer* trainer) { delete trainer; }

prdlab_status prdlab_model_load(const char* path, prdlab_model** out) {
  return guarded([&] {
    require(path != nullptr && out != nullptr, "null argument");
    *out = new prdlab_model(prdlab::load_model(path));
  });
}

prdlab_status prdlab_model_save(const prdlab_model* model, const char* path) {
  return guarded([&] {
    require(model != nullptr && path != nullptr, "null argument");
    prdlab::save_model(path, model->model);
  });
}

size_t prdlab_model_embed_dim(const prdlab_model* model) {
  return model == nullptr ? 0 : model->model.config().embed_dim;
}

prdlab_status prdlab_model_embed_text(const prdlab_model* model, const char* report, double* out) {
  return guarded([&] {
    require(model != nullptr && report != nullptr && out != nullptr, "null argument");
    const auto v = prdlab::ModelEmbedder(model->model).embed_text(prdlab::tokenize(report));
    std::copy(v.begin(), v.end(), out);
  });
}

void prdlab_model_free(prdlab_model* model) { delete model; }

prdlab_status prdlab_eval_structure(const prdlab_model* model, const prdlab_corpus* pairs, uint64_t seed,
                                    char** out_json) {
  return guarded([&] {
    require(model != nullptr && pairs != nullptr && out_json != nullptr, "null argument");
    const prdlab::ModelEmbedder embedder(model->model);
    const auto result = prdlab::structure_eval(pairs->pairs, embedder, {.seed = seed});
    *out_json = dup_string(structure_json(result, seed).dump(2));
  });
}

prdlab_status prdlab_eval_retrieval(const prdlab_model* model, const prdlab_corpus* pairs, const size_t* k_values,
                                    size_t k_count, char** out_json) {
  return guarded([&] {
    require(model != nullptr && pairs != nullptr && out_json != nullptr, "null argument");
    require(k_values != nullptr && k_count > 0, "no k values");
    const prdlab::ModelEmbedder embedder(model->model);
    const auto r = prdlab::retrieval_eval(pairs->pairs, embedder, std::span<const std::size_t>(k_values, k_count));
    json out = {{"n", r.n}, {"k", r.k_values}};
    json i2t = json::object();
    json t2i = json::object();
    for (std::size_t i = 0; i < r.k_values.size(); ++i) {
      i2t[std::to_string(r.k_values[i])] = r.image_to_text[i];
      t2i[std::to_string(r.k_values[i])] = r.text_to_image[i];
    }
    out["image_to_text"] = i2t;
    out["text_to_image"] = t2i;
    out["random_baseline_recall_at_1"] = 1.0 / static_cast<double>(r.n);
    *out_json = dup_string(out.dump(2));
  });
}

prdlab_status prdlab_probe(const prdlab_model* model, const prdlab_corpus* pairs, uint64_t split_seed,
                           char** out_json) {
  return guarded([&] {
    require(model != nullptr && pairs != nullptr && out_json != nullptr, "null argument");
    const prdlab::ModelEmbedder embedder(model->model);
    const auto embeddings = prdlab::image_embeddings(pairs->pairs, embedder);
    std::vector<prdlab::Labels> labels;
    for (const auto& p : pairs->pairs) labels.push_back(p.labels);
    const auto r = prdlab::linear_probe(embeddings, labels, {.split_seed = split_seed});
    json accuracy = json::object();
    for (std::size_t f = 0; f < prdlab::kFindingCount; ++f) {
      accuracy[std::string(prdlab::finding_name(f))] = r.accuracy[f];
    }
    *out_json = dup_string(json{{"split_seed", split_seed},
                                {"n_train", r.n_train},
                                {"n_test", r.n_test},
                                {"accuracy", accuracy}}
                               .dump(2));
  });
}

prdlab_status prdlab_gradcheck(size_t instances, uint64_t seed, double tolerance, int* passed, char** out_json) {
  return guarded([&] {
    require(passed != nullptr && out_json != nullptr, "null argument");
    const auto losses = prdlab::check_loss_gradients(instances, seed, tolerance);
    const auto ops = prdlab::check_op_gradients(instances, seed, tolerance);
    json cases = json::array();
    for (const auto* report : {&losses, &ops}) {
      for (const auto& c : report->cases) {
        cases.push_back({{"name", c.name},
                         {"kind", report == &losses ? "loss" : "op"},
                         {"instances", c.instances},
                         {"max_relative_error", c.max_error},
                         {"passed", c.max_error < tolerance}});
      }
    }
    *passed = losses.passed() && ops.passed() ? 1 : 0;
    *out_json = dup_string(json{{"tolerance", tolerance},
                                {"step", losses.step},
                                {"seed", seed},
                                {"passed", *passed == 1},
                                {"cases", cases}}
                               .dump(2));
  });
}

}  // extern "C"
