#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "pgqa/ingest.hpp"

namespace pgqa::finder {

/// Learned linear encoder over signed-hash n-gram features.
///
/// A text maps to a sparse feature vector f (word unigrams, plus bigrams when
/// ngram_max is 2, each hashed into feature_dim buckets with a hash-derived sign);
/// its embedding is normalize(P^T f) where P is the feature_dim x embed_dim
/// projection stored row-major.
struct EncoderParams {
  std::size_t feature_dim = 0;
  std::size_t embed_dim = 0;
  int ngram_max = 2;
  double tau = 0.05;
  std::uint64_t seed = 0;
  std::vector<double> projection;

  double* row(std::size_t feature) { return projection.data() + feature * embed_dim; }
  const double* row(std::size_t feature) const { return projection.data() + feature * embed_dim; }

  /// Throws ValidationError unless dims are positive, tau > 0, the projection has
  /// feature_dim * embed_dim entries and every entry is finite.
  void validate() const;

  /// Gaussian projection, entries N(0, 1/embed_dim), drawn from `seed`.
  static EncoderParams random(std::size_t feature_dim, std::size_t embed_dim, double tau,
                              std::uint64_t seed, int ngram_max = 2);
  /// Identity projection; feature_dim == embed_dim == dim.
  static EncoderParams identity(std::size_t dim, double tau = 0.05, int ngram_max = 2);

  friend bool operator==(const EncoderParams&, const EncoderParams&) = default;
};

/// Sparse feature vector, sorted by index with duplicates summed.
struct Features {
  std::vector<std::pair<std::uint32_t, double>> entries;
  bool empty() const { return entries.empty(); }
};

/// Lowercased runs of letters and digits (bytes >= 0x80 count as letters).
std::vector<std::string> feature_tokens(std::string_view text);
Features featurize(std::string_view text, std::size_t feature_dim, int ngram_max);

struct Embedding {
  std::vector<double> values;
  bool degenerate = false;  ///< no usable features; values is the fixed fallback direction
};

Embedding embed_features(const Features& features, const EncoderParams& params);
Embedding encode(std::string_view text, const EncoderParams& params);

double dot(const std::vector<double>& a, const std::vector<double>& b);

using Matrix = std::vector<std::vector<double>>;

/// Multiple-negatives ranking loss over a square similarity matrix whose diagonal
/// holds the positive pairs: mean over rows of -log softmax(row / tau)[diagonal].
double mnrl_loss(const Matrix& sims, double tau);

/// Row-sparse gradient with respect to the projection.
struct ProjectionGrad {
  std::vector<std::uint32_t> rows;
  std::vector<double> values;  ///< rows.size() x embed_dim, row-major
};

/// Loss of one in-batch-negatives batch; fills `grad` when non-null.
double batch_loss(const EncoderParams& params, const std::vector<Features>& queries,
                  const std::vector<Features>& positives, ProjectionGrad* grad = nullptr);

struct TrainConfig {
  std::size_t batch_size = 16;
  std::size_t epochs = 1;
  double learning_rate = 2e-5;
  double warmup_ratio = 0.0;
  double tau = 0.05;
  std::uint64_t seed = 0;
  std::size_t feature_dim = 1u << 14;
  std::size_t embed_dim = 128;
  int ngram_max = 2;

  /// One epoch, batch 16, lr 2e-5, warmup 0.1 over 100,000 sampled pairs.
  static TrainConfig reference();
  static constexpr std::size_t kReferencePairs = 100000;
};

struct EpochLoss {
  std::size_t epoch = 0;  ///< 0 is the untrained evaluation pass
  double mean_loss = 0.0;
};

struct TrainResult {
  EncoderParams params;
  std::vector<EpochLoss> trace;
  bool diverged = false;
  std::string error;
};

using TrainingPair = std::pair<std::string, std::string>;  ///< (query, positive page text)

/// Mini-batch gradient descent on the ranking loss over seeded shuffles of the
/// pairs. Deterministic for a given seed. Throws ValidationError when the batch
/// size is below 2 or exceeds the number of pairs.
TrainResult train_encoder(const std::vector<TrainingPair>& pairs, const TrainConfig& config);
TrainResult train_encoder(const std::vector<TrainingPair>& pairs, const TrainConfig& config,
                          EncoderParams initial);

void write_params(std::ostream& out, const EncoderParams& params);
EncoderParams read_params(std::istream& in);
void save_params(const std::string& path, const EncoderParams& params);
EncoderParams load_params(const std::string& path);
std::string loss_trace_csv(const std::vector<EpochLoss>& trace);

struct ScoredPage {
  int page_no = 0;
  double score = 0.0;
  std::size_t token_length = 0;

  friend bool operator==(const ScoredPage&, const ScoredPage&) = default;
};

/// Precomputed page embeddings for repeated queries against one document.
struct PageIndex {
  std::vector<Embedding> pages;
  std::vector<std::size_t> token_lengths;
};

PageIndex index_document(const ingest::Document& doc, const EncoderParams& params);

/// Cosine score per page, sorted by score descending then page number ascending.
std::vector<ScoredPage> score_pages(const PageIndex& index, const std::vector<double>& query);
std::vector<ScoredPage> score_pages(const ingest::Document& doc, std::string_view query,
                                    const EncoderParams& params);

struct ContextSelection {
  std::vector<int> pages;  ///< ascending
  std::size_t total_tokens = 0;
  std::size_t budget = 0;
  bool truncated = false;  ///< the single best page alone exceeded the budget and was cut
};

/// Budgeted context: seed with up to k_top best pages that fit, then repeatedly
/// add the best-scored neighbour of the selection that still fits. Throws
/// ValidationError when budget or k_top is zero.
ContextSelection select_context(const std::vector<ScoredPage>& ranked, std::size_t budget,
                                std::size_t k_top = 1);

}  // namespace pgqa::finder
