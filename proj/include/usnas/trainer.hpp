#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "usnas/controller.hpp"
#include "usnas/folds.hpp"
#include "usnas/image.hpp"
#include "usnas/metrics.hpp"
#include "usnas/network.hpp"
#include "usnas/optim.hpp"
#include "usnas/supergraph.hpp"

namespace usnas {

struct SearchConfig {
  int controller_epochs = 150;
  int candidates_per_epoch = 10;
  double validation_fraction = 0.10;
  int node_count = 5;  // B
  int base_channels = 20;
  int num_classes = 2;
  int input_side = 100;
  int input_channels = 1;
  int batch_size = 32;
  double child_lr_max = 0.05;
  double child_lr_min = 5e-4;
  int child_t0 = 10;
  int child_t_mult = 2;
  double child_momentum = 0.9;
  double child_weight_decay = 1e-4;
  ControllerHyperparams controller;
  CountingConfig counting;
  uint64_t seed = 0;
};

struct TrainConfig {
  int epochs = 100;
  int batch_size = 32;
  double lr_max = 0.05;
  double lr_min = 5e-4;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int base_channels = 36;
  int num_classes = 2;
  int input_side = 100;
  int input_channels = 1;
  int workers = 1;
  CountingConfig counting;
  uint64_t seed = 0;
};

struct EpochRecord {
  double mean_loss = 0.0;
  int batches = 0;
};

struct CandidateRecord {
  int epoch = 0;
  int index = 0;
  ArchPair arch;
  double val_accuracy = 0.0;
};

struct SearchReport {
  std::vector<CandidateRecord> candidates;
  ArchPair best;
  double best_accuracy = -1.0;
  int best_epoch = -1;
  int best_index = -1;
  std::vector<EpochRecord> child_epochs;
};

struct TrainCurvePoint {
  double loss = 0.0;
  double accuracy = 0.0;
};

struct TrainedModel {
  std::unique_ptr<FixedNetwork> net;
  std::vector<TrainCurvePoint> curve;
};

struct CvResult {
  std::vector<Metrics> per_fold;
  Metrics mean;
  std::vector<std::unique_ptr<FixedNetwork>> models;
};

// Mean batch loss over one pass of shared-weight child training: each batch
// trains the subnetwork of a freshly sampled architecture. Exclusive access
// to the supergraph weights is the caller's contract.
EpochRecord train_child_epoch(SharedSupergraph& super,
                              const ControllerPolicy& policy,
                              const std::vector<RoiImage>& train_images,
                              const SearchConfig& cfg, nn::SgdMomentum& opt,
                              double lr, Rng& rng);

// Samples candidates, scores each on the validation set (policy and
// supergraph read-only) and applies one policy-gradient update with the
// accuracies as rewards, in sampling order.
std::vector<CandidateRecord> controller_epoch(
    SharedSupergraph& super, ControllerPolicy& policy, BaselineState& baseline,
    const std::vector<RoiImage>& val_images, const SearchConfig& cfg,
    Rng& rng, int epoch_index);

// The full first stage: alternating child and controller epochs over a
// training split whose validation carve-out is made here (by source, so no
// variant of a validation image enters child training). Returns the best
// candidate by validation accuracy, earliest first on ties.
SearchReport search(const std::vector<RoiImage>& dataset,
                    const SearchConfig& cfg);

// From-scratch training of a fixed network (cross-entropy, momentum SGD,
// single cosine decay). Returns the model and the per-epoch loss/accuracy
// curve.
TrainedModel train_from_scratch(const NetworkSpec& spec,
                                const std::vector<RoiImage>& train_images,
                                const TrainConfig& cfg);

// Confusion counts of a trained network over a set of images (positive class
// MALIGNANT; logit ties resolve to BENIGN).
Metrics evaluate_network(FixedNetwork& net, const std::vector<RoiImage>& images,
                         const TrainConfig& cfg);

// Per-fold train/evaluate per the leakage rule: training uses the 8x
// augmented images of sources outside the fold, evaluation uses the fold's
// ORIGINAL images only.
CvResult cross_validate(const ArchPair& arch, StackVariant variant,
                        const std::vector<RoiImage>& originals,
                        const FoldAssignment& folds, const TrainConfig& cfg);

// Search report document (candidate log, best genotype, config echo).
std::string search_report_json(const SearchReport& report,
                               const SearchConfig& cfg);

}  // namespace usnas
