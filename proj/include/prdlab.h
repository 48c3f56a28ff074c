#ifndef PRDLAB_H
#define PRDLAB_H

/* C interface to the prdlab library. Every call that can fail returns a
 * prdlab_status; on failure prdlab_last_error() describes the problem for the
 * calling thread. Strings returned through char** are owned by the caller and
 * released with prdlab_string_free(). Structured results are JSON. */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#  ifdef PRDLAB_BUILDING
#    define PRDLAB_API __declspec(dllexport)
#  else
#    define PRDLAB_API __declspec(dllimport)
#  endif
#else
#  define PRDLAB_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum prdlab_status {
  PRDLAB_OK = 0,
  PRDLAB_ERR_INVALID_ARGUMENT = 1, /* bad input, config or handle */
  PRDLAB_ERR_RUNTIME = 2,          /* I/O failure, numerical failure */
  PRDLAB_ERR_INTERNAL = 3
} prdlab_status;

typedef struct prdlab_corpus prdlab_corpus;
typedef struct prdlab_model prdlab_model;
typedef struct prdlab_trainer prdlab_trainer;

PRDLAB_API const char* prdlab_version(void);
/* Message of the last failed call on this thread; "" if none. */
PRDLAB_API const char* prdlab_last_error(void);
PRDLAB_API void prdlab_string_free(char* s);

/* Default configuration as flat dotted JSON keys. */
PRDLAB_API prdlab_status prdlab_default_config_json(char** out_json);

/* Synthetic corpora. Sample ids run from first_id to first_id + n - 1. */
PRDLAB_API prdlab_status prdlab_corpus_generate(size_t n, size_t side, uint64_t seed, uint64_t first_id,
                                                prdlab_corpus** out);
PRDLAB_API prdlab_status prdlab_corpus_load(const char* jsonl_path, prdlab_corpus** out);
/* Writes <dir>/corpus.jsonl and <dir>/images/<id>.pgm. */
PRDLAB_API prdlab_status prdlab_corpus_save(const prdlab_corpus* corpus, const char* dir);
PRDLAB_API prdlab_status prdlab_corpus_slice(const prdlab_corpus* corpus, size_t begin, size_t count,
                                             prdlab_corpus** out);
PRDLAB_API size_t prdlab_corpus_size(const prdlab_corpus* corpus);
PRDLAB_API prdlab_status prdlab_corpus_report(const prdlab_corpus* corpus, size_t index, char** out);
PRDLAB_API void prdlab_corpus_free(prdlab_corpus* corpus);

/* Perturbation set of one report as a JSON object. */
PRDLAB_API prdlab_status prdlab_perturb_json(const char* report, uint64_t seed, char** out_json);

/* Training. config_json may be NULL for defaults; it uses the same flat keys
 * as prdlab_default_config_json. */
PRDLAB_API prdlab_status prdlab_trainer_create(const char* config_json, const prdlab_corpus* corpus,
                                               prdlab_trainer** out);
PRDLAB_API prdlab_status prdlab_trainer_resume(const char* checkpoint_path, const prdlab_corpus* corpus,
                                               prdlab_trainer** out);
/* Runs one epoch; *out_jsonl receives one metrics object per step. */
PRDLAB_API prdlab_status prdlab_trainer_run_epoch(prdlab_trainer* trainer, char** out_jsonl);
PRDLAB_API size_t prdlab_trainer_epochs_done(const prdlab_trainer* trainer);
PRDLAB_API size_t prdlab_trainer_epochs_total(const prdlab_trainer* trainer);
PRDLAB_API prdlab_status prdlab_trainer_config_json(const prdlab_trainer* trainer, char** out_json);
PRDLAB_API prdlab_status prdlab_trainer_save_checkpoint(const prdlab_trainer* trainer, const char* path);
/* Snapshot of the current encoders. */
PRDLAB_API prdlab_status prdlab_trainer_model(const prdlab_trainer* trainer, prdlab_model** out);
PRDLAB_API void prdlab_trainer_free(prdlab_trainer* trainer);

/* Encoders. load accepts encoder and training checkpoints. */
PRDLAB_API prdlab_status prdlab_model_load(const char* path, prdlab_model** out);
PRDLAB_API prdlab_status prdlab_model_save(const prdlab_model* model, const char* path);
PRDLAB_API size_t prdlab_model_embed_dim(const prdlab_model* model);
/* Writes embed_dim values into out. */
PRDLAB_API prdlab_status prdlab_model_embed_text(const prdlab_model* model, const char* report, double* out);
PRDLAB_API void prdlab_model_free(prdlab_model* model);

/* Evaluation; results are JSON objects. */
PRDLAB_API prdlab_status prdlab_eval_structure(const prdlab_model* model, const prdlab_corpus* pairs, uint64_t seed,
                                               char** out_json);
PRDLAB_API prdlab_status prdlab_eval_retrieval(const prdlab_model* model, const prdlab_corpus* pairs,
                                               const size_t* k_values, size_t k_count, char** out_json);
PRDLAB_API prdlab_status prdlab_probe(const prdlab_model* model, const prdlab_corpus* pairs, uint64_t split_seed,
                                      char** out_json);

/* Finite-difference checks of the losses and tensor ops. *passed is 1 when
 * every case stays below tolerance. */
PRDLAB_API prdlab_status prdlab_gradcheck(size_t instances, uint64_t seed, double tolerance, int* passed,
                                          char** out_json);

#ifdef __cplusplus
}
#endif

#endif
