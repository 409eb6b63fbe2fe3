#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "crosswise/feat.hpp"
#include "crosswise/nn/model.hpp"
#include "crosswise/nn/optim.hpp"
#include "crosswise/scenario.hpp"

namespace crosswise::eval {

/// Crosswalk B is the positive class.
struct ConfusionCounts {
  std::int64_t tp = 0, tn = 0, fp = 0, fn = 0;

  std::int64_t total() const { return tp + tn + fp + fn; }
  bool operator==(const ConfusionCounts&) const = default;
};

/// Undefined ratios (zero denominator) are empty rather than 0.
struct Metrics {
  double accuracy = 0;
  std::optional<double> precision, recall, f1;
};

/// Throws std::invalid_argument when all counts are zero.
Metrics metrics(const ConfusionCounts& c);

ConfusionCounts confusion(std::span<const double> p_b, std::span<const int> labels);

struct LabeledWindow {
  FeatureWindow window;
  int label = 0;  // 1 = crosswalk B
  int vru_id = -1;
};

struct Dataset {
  std::vector<LabeledWindow> items;
  /// FNV-1a over window values, labels and ids.
  std::string hash() const;
  std::size_t count_label(int label) const;
};

/// Runs tracking and feature extraction over the stream and labels each
/// window with the ground truth of the VRU its track was spawned from.
/// Tracks that match no VRU are dropped.
Dataset build_dataset(const std::vector<FrameRecord>& frames, const std::vector<VruTruth>& truth,
                      const IntersectionGeometry& g);

struct Split {
  std::vector<std::size_t> train, val, test;
};

/// Partitions by VRU id so no identity straddles two splits. Throws when a
/// split would be empty.
Split split_by_track(const Dataset& ds, std::uint64_t seed, double train_frac = 0.7,
                     double val_frac = 0.15);

enum class Precision { F32, F64 };

struct TrainConfig {
  nn::ModelConfig model;
  int epochs = 250;
  int batch_size = 64;
  nn::AdamWHyper adam;
  double clip_norm = 1.0;
  nn::PlateauScheduler::Options plateau;
  std::uint64_t seed = 7;
  GroupMask groups = kAllGroups;
  /// Stop after this many epochs without a new best validation loss; 0 runs
  /// every epoch.
  int early_stop_patience = 0;
  Precision precision = Precision::F32;
};

/// Config JSON keys mirror the struct; missing keys keep defaults.
TrainConfig parse_train_config(const std::string& json_text);
TrainConfig load_train_config(const std::string& path);

struct EpochLog {
  int epoch = 0;
  double train_loss = 0, val_loss = 0, val_accuracy = 0, lr = 0;
};

struct ExperimentRow {
  std::string name;
  Metrics test;
  ConfusionCounts counts;
  int epochs_run = 0;
  double best_val_loss = 0;
  std::size_t n_params = 0;
  std::size_t n_train = 0, n_val = 0, n_test = 0;
  double wall_clock_s = 0;
};

struct ReferenceRow {
  std::string name;
  double accuracy, precision, recall, f1;
};

struct ExperimentReport {
  std::string kind;
  std::uint64_t seed = 0;
  std::string dataset_hash;
  std::vector<ExperimentRow> rows;
  std::vector<ReferenceRow> reference;  // published values from a private dataset
  /// Wall-clock fields are omitted when `include_timing` is false so that
  /// two runs with equal seeds compare equal.
  std::string to_json(bool include_timing = true) const;
};

template <class S>
struct TrainResult {
  nn::ModelParams<S> params;
  ExperimentRow row;
  std::vector<EpochLog> history;
};

/// Mini-batch AdamW with clipping and the plateau schedule; returns the
/// best-validation-loss parameters evaluated on the test split.
template <class S>
TrainResult<S> train(const Dataset& ds, const Split& split, const TrainConfig& cfg);

/// Metrics of `params` on the given item indices, with the group mask applied.
template <class S>
ConfusionCounts evaluate(const Dataset& ds, std::span<const std::size_t> idx, const nn::ModelParams<S>& params,
                         GroupMask groups);

/// Trains each of L, L+M, L+M+G, L+M+G+P (or `configs` when given) with
/// identical seeds and splits.
ExperimentReport ablation(const Dataset& ds, const TrainConfig& base, std::vector<GroupMask> configs = {});

/// Trains the single-, two- and four-head models with everything else equal.
ExperimentReport head_sweep(const Dataset& ds, const TrainConfig& base, std::vector<int> heads = {1, 2, 4});

std::vector<ReferenceRow> reference_head_rows();
std::vector<ReferenceRow> reference_ablation_rows();

}  // namespace crosswise::eval
