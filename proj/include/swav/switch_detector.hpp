#pragma once

// Transformer aggregator + MLP view head, the pretext objective, and the
// AdamW training loop shared with the view selector.

#include "swav/encoder_bank.hpp"

#include <json.hpp>

#include <array>
#include <functional>
#include <optional>
#include <span>
#include <vector>

namespace swav {

struct Prediction {
    std::array<double, 2> logits{};
    std::array<double, 2> probs{};  // index 0 = ego, 1 = exo
    ViewLabel predicted;
};

/// Softmax plus argmax; equal probabilities resolve to exo.
Prediction make_prediction(double logit_ego, double logit_exo);

/// Logits (1 x 2) of the CLS output. Throws TrainingDiverged on non-finite values.
ag::Var aggregate_logits(const ViewModel& model, const TokenSequence& seq);

Prediction to_prediction(const ag::Var& logits);

Prediction detector_forward(const ViewModel& model, const Sample& sample, const InputMask& mask = {});

/// Two-class cross-entropy against the hard target kind.
double loss_detector(const Prediction& pred, ViewKind target);
/// Mean over a batch.
double loss_detector(std::span<const Prediction> preds, std::span<const ViewKind> targets);

struct TrainConfig {
    std::size_t epochs = 50;
    std::size_t batch_size = 16;
    double lr = 1e-3;
    double weight_decay = 0.01;  // applied to ".weight" tensors only
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double grad_clip = 1.0;      // global norm; 0 disables
    std::size_t patience = 5;    // epochs without validation improvement
    std::optional<double> target_val_bacc;
    std::uint64_t seed = 0;
    InputMask mask;
};

nlohmann::json to_json(const TrainConfig& cfg);

struct EpochStats {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_bacc = 0.0;
};

struct TrainHistory {
    std::vector<EpochStats> epochs;
    std::size_t best_epoch = 0;  // 1-based; 0 when no epoch ran
    double best_val_bacc = 0.0;
    bool stopped_early = false;
};

nlohmann::json to_json(const TrainHistory& h);

/// One training item as seen by the optimizer loop.
struct TrainTask {
    std::size_t n_train = 0;
    std::size_t n_val = 0;
    /// Scalar loss of training item i.
    std::function<ag::Var(const ViewModel&, std::size_t)> train_loss;
    /// Logits of validation item i.
    std::function<ag::Var(const ViewModel&, std::size_t)> val_logits;
    std::vector<std::uint8_t> val_truth;  // class index
    std::vector<std::uint8_t> val_group;  // 1 when the item is a view switch
};

/// Minibatch AdamW over the trainable tensors with early stopping on
/// validation balanced accuracy; the best parameters are restored.
TrainHistory fit(ViewModel& model, const TrainTask& task, const TrainConfig& cfg);

/// Samples on the grid t = k * stride that have a full frame window and a
/// labeled target.
std::vector<Sample> build_samples(const VideoRecord& record, const WindowConfig& window, double stride);
std::vector<Sample> build_samples(const std::vector<VideoRecord>& records, const WindowConfig& window,
                                  double stride);

struct SampleSplit {
    std::vector<Sample> train;
    std::vector<Sample> val;
};

/// Whole videos go to validation; the split is seed-determined.
SampleSplit split_by_video(const std::vector<Sample>& samples, double val_fraction, std::uint64_t seed);

TrainHistory train_detector(ViewModel& model, const std::vector<Sample>& train, const std::vector<Sample>& val,
                            const TrainConfig& cfg);

enum class DecodeMode { TeacherForcing, Autoregressive };

struct TimedPrediction {
    double t = 0.0;
    Prediction prediction;
};

using SamplePredictor = std::function<Prediction(const Sample&)>;

/// One prediction per grid point t = k * stride with a full frame window and
/// t + delta inside the video. Teacher forcing reads past views from the view
/// track; autoregressive decoding feeds back its own predictions (the track,
/// when present, only seeds the views before the first prediction).
std::vector<TimedPrediction> predict_sequence(const VideoRecord& record, const WindowConfig& window, double stride,
                                              DecodeMode mode, const SamplePredictor& predictor);
std::vector<TimedPrediction> predict_sequence(const ViewModel& model, const VideoRecord& record,
                                              const WindowConfig& window, double stride, DecodeMode mode);

}  // namespace swav
