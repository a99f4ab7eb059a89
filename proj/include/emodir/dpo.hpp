#pragma once

#include <string>
#include <vector>

#include "emodir/denoiser.hpp"
#include "emodir/prompt_bank.hpp"
#include "emodir/schedule.hpp"

namespace emodir {

// Parameter groups updated during preference training. Everything else —
// the base denoiser weights and the text retrieval keys — stays frozen and
// is checksummed before/after.
struct TrainableSet {
    bool lora = true;         // A_* and B_* of every cross-attention
    bool bank_visual = true;  // the visual center matrices
    bool visual_in = true;    // the visual token input maps
};

struct TrainerConfig {
    double beta = 5000.0;  // KL regularization coefficient
    double omega = 1.0;    // constant timestep weighting
    double learning_rate = 1e-5;
    double warmup_fraction = 0.25;  // linear warmup over this fraction of steps
    int batch_size = 16;
    int ref_batch_size = 64;
    int steps = 2000;
    int timesteps = 100;  // T
    double beta_start = 1e-4;
    double beta_end = 0.06;
    uint64_t seed = 0;
    TrainableSet trainable;

    double beta_t_omega() const { return beta * double(timesteps) * omega; }
    void validate() const;

    // CPU-minutes preset used by the end-to-end experiment: short run,
    // small batch, preference coefficient scaled down so the logistic
    // stays out of saturation at toy residual magnitudes.
    static TrainerConfig desk_scale();
};

// Scalar cores of the objective, exposed for direct verification:
// preference_pair_loss = -log sigmoid(-btw * (d_chosen - d_rejected)),
// negative_penalty     = -log sigmoid(-btw * delta).
double preference_pair_loss(double d_chosen, double d_rejected, double beta_t_omega);
double negative_penalty(double delta, double beta_t_omega);

struct PreferenceExample {
    std::string prompt;
    int emotion = 0;
    Image chosen, rejected;
};

struct PretrainExample {
    std::string prompt;
    int emotion = 0;
    Image image;
};

// One assembled training item: a shared timestep, independent noises for
// the chosen/rejected latents, the positive condition and the same-text
// negative-visual condition. The negative term reuses the chosen latent and
// its noise.
struct PreferenceBatchItem {
    int t = 1;
    Image xt_chosen, xt_rejected;
    Image eps_chosen, eps_rejected;
    Condition cond;
    Condition cond_neg;
};

struct PreferenceBatch {
    std::vector<PreferenceBatchItem> items;
};

PreferenceBatch assemble_batch(const std::vector<PreferenceExample>& pairs,
                               const std::vector<int>& indices, const PromptBank& bank,
                               const TextEncoder& enc, const NoiseSchedule& sched,
                               int cond_tokens, Rng& rng);

// Gradients of the bank's visual centers, accumulated by scattering token
// gradients back through the retrieval indices.
struct BankGrads {
    std::vector<Matrix> visual;
    static BankGrads zeros(const PromptBank& bank);
};

struct LossResult {
    double loss = 0.0;
    double dpo_term = 0.0;
    double penalty_term = 0.0;
    double mean_margin = 0.0;  // mean of -(d_chosen - d_rejected)
};

// Diffusion preference loss over the batch (mean); with the emotion variant
// the negative-visual penalty term is added. When grads is non-null,
// parameter gradients accumulate into grads (and bank_grads, when given).
LossResult dpo_loss(const DenoiserModel& theta, const DenoiserModel& ref,
                    const PreferenceBatch& batch, const TrainerConfig& cfg,
                    DenoiserModel* grads = nullptr, BankGrads* bank_grads = nullptr);
LossResult emotion_dpo_loss(const DenoiserModel& theta, const DenoiserModel& ref,
                            const PreferenceBatch& batch, const TrainerConfig& cfg,
                            DenoiserModel* grads = nullptr, BankGrads* bank_grads = nullptr);

// Central finite differences over >= min_samples scalars drawn from every
// trainable tensor (f64). Returns max |g_analytic - g_fd| / max(|g_fd|, 1e-8).
struct GradCheckResult {
    double max_rel_error = 0.0;
    int n_checked = 0;
};
GradCheckResult grad_check(DenoiserModel& theta, const DenoiserModel& ref, PromptBank& bank,
                           PreferenceBatch& batch, const TrainerConfig& cfg, bool emotion_term,
                           int min_samples, double fd_eps, uint64_t seed);

struct StepMetrics {
    int step = 0;
    double loss = 0.0;
    double margin = 0.0;
    double lr = 0.0;
};

// Line-delimited "step<TAB>loss<TAB>margin<TAB>lr".
void save_metrics(const std::string& path, const std::vector<StepMetrics>& metrics);
std::vector<StepMetrics> load_metrics(const std::string& path);

// Plain denoising pretraining of the base weights (LoRA untouched, visual
// tokens zero) to produce the reference model. Aborts on divergence.
std::vector<StepMetrics> reference_pretrain(DenoiserModel& model,
                                            const std::vector<PretrainExample>& data,
                                            const TrainerConfig& cfg, const TextEncoder& enc);

struct TrainResult {
    std::vector<StepMetrics> metrics;
    uint64_t frozen_checksum = 0;  // identical before and after by contract
};

// Preference training of theta against the frozen ref: per step assembles a
// batch, evaluates the emotion-sensitive loss, and updates only the
// TrainableSet with Adam under linear warmup. Verifies that frozen
// parameters are bit-identical afterwards.
TrainResult train(DenoiserModel& theta, const DenoiserModel& ref,
                  const std::vector<PreferenceExample>& pairs, PromptBank& bank,
                  const TrainerConfig& cfg, const TextEncoder& enc);

uint64_t frozen_params_checksum(const DenoiserModel& m, const PromptBank& bank,
                                const TrainableSet& ts);

}  // namespace emodir
