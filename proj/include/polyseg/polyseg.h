#ifndef POLYSEG_H
#define POLYSEG_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define PSEG_API __declspec(dllexport)
#else
#define PSEG_API __attribute__((visibility("default")))
#endif

/* Status codes double as CLI exit codes. */
typedef enum pseg_status {
    PSEG_OK = 0,
    PSEG_ERR_USAGE = 1,   /* invalid argument, bad config, misuse */
    PSEG_ERR_DATA = 2,    /* unreadable/malformed files or datasets */
    PSEG_ERR_NUMERIC = 3  /* NaN/Inf during computation */
} pseg_status;

typedef struct pseg_model pseg_model;

/* Message for the last failing call on this thread; never NULL. */
PSEG_API const char* pseg_last_error(void);

PSEG_API pseg_status pseg_synth(const char* out_dir, int count, int height, int width, uint64_t seed);

typedef struct pseg_train_options {
    int epochs;
    int batch_size;
    uint64_t seed;
    double lr0;
    int t_max;           /* cosine period in epochs; <= 0 uses epochs */
    double weight_decay;
    int augment;         /* nonzero enables the default augmentation policy */
    double val_fraction; /* held-out share scored each epoch; 0 scores the training set */
} pseg_train_options;

PSEG_API void pseg_train_options_default(pseg_train_options* options);

typedef void (*pseg_epoch_callback)(int epoch, double lr, double loss, double dice, void* user);

/* config_path may be NULL for the default architecture. overrides are
   "key=value" strings applied after the file. history_path may be NULL. */
PSEG_API pseg_status pseg_train(const char* data_dir, const char* config_path, const char* const* overrides,
                                size_t override_count, const pseg_train_options* options, const char* checkpoint_out,
                                const char* history_path, pseg_epoch_callback on_epoch, void* user);

PSEG_API pseg_status pseg_model_load(const char* checkpoint, pseg_model** out);
PSEG_API void pseg_model_free(pseg_model* model);
PSEG_API pseg_status pseg_model_parameter_count(const pseg_model* model, size_t* out);

typedef struct pseg_postprocess_options {
    float threshold;
    int smooth;
    int open_kernel;
    int close_kernel;
    int drop_small;
    double min_area; /* at 384x384, rescaled to the image size */
    int merge;
} pseg_postprocess_options;

PSEG_API void pseg_postprocess_options_default(pseg_postprocess_options* options);

/* Writes <stem>_mask.png, <stem>_boxes.txt and <stem>_overlay.png into out_dir.
   gt_mask_path may be NULL; options may be NULL for defaults. */
PSEG_API pseg_status pseg_infer(pseg_model* model, const char* image_path, const char* gt_mask_path,
                                const char* out_dir, int postprocess, const pseg_postprocess_options* options);

typedef struct pseg_report {
    double dice;
    long tp, fp, fn;
    double precision, recall, f1;
    size_t images;
} pseg_report;

/* Evaluates every pair under data_dir. report_path (may be NULL) receives the
   text report; a JSON copy is written beside it with a .json extension. */
PSEG_API pseg_status pseg_eval(pseg_model* model, const char* data_dir, const pseg_postprocess_options* options,
                               const char* report_path, pseg_report* with_postprocess,
                               pseg_report* without_postprocess);

#ifdef __cplusplus
}
#endif

#endif
