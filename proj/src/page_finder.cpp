#include "pgqa/page_finder.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <queue>
#include <unordered_map>

#include "pgqa/error.hpp"
#include "pgqa/random.hpp"
#include "pgqa/text.hpp"

namespace pgqa::finder {

void EncoderParams::validate() const {
  if (feature_dim == 0 || embed_dim == 0) throw ValidationError("encoder dims must be positive");
  if (!(tau > 0.0) || !std::isfinite(tau)) throw ValidationError("tau must be positive");
  if (ngram_max != 1 && ngram_max != 2) throw ValidationError("ngram_max must be 1 or 2");
  if (projection.size() != feature_dim * embed_dim)
    throw ValidationError("projection size does not match feature_dim x embed_dim");
  for (double v : projection)
    if (!std::isfinite(v)) throw ValidationError("projection contains non-finite values");
}

EncoderParams EncoderParams::random(std::size_t feature_dim, std::size_t embed_dim, double tau,
                                    std::uint64_t seed, int ngram_max) {
  EncoderParams p{feature_dim, embed_dim, ngram_max, tau, seed, {}};
  p.projection.resize(feature_dim * embed_dim);
  Rng rng(derive_seed(seed, "projection"));
  const double scale = 1.0 / std::sqrt(static_cast<double>(embed_dim));
  for (double& v : p.projection) v = scale * rng.normal();
  p.validate();
  return p;
}

EncoderParams EncoderParams::identity(std::size_t dim, double tau, int ngram_max) {
  EncoderParams p{dim, dim, ngram_max, tau, 0, std::vector<double>(dim * dim, 0.0)};
  for (std::size_t i = 0; i < dim; ++i) p.projection[i * dim + i] = 1.0;
  return p;
}

std::vector<std::string> feature_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || c >= 0x80) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

namespace {

void add_hashed(std::map<std::uint32_t, double>& acc, std::string_view key, std::size_t dim) {
  const std::uint64_t h = fnv1a64(key);
  const double sign = (h >> 63) ? -1.0 : 1.0;
  acc[static_cast<std::uint32_t>(h % dim)] += sign;
}

}  // namespace

Features featurize(std::string_view text, std::size_t feature_dim, int ngram_max) {
  const std::vector<std::string> toks = feature_tokens(text);
  std::map<std::uint32_t, double> acc;
  std::string key;
  for (std::size_t i = 0; i < toks.size(); ++i) {
    key = "u\x1f" + toks[i];
    add_hashed(acc, key, feature_dim);
    if (ngram_max >= 2 && i + 1 < toks.size()) {
      key = "b\x1f" + toks[i] + "\x1f" + toks[i + 1];
      add_hashed(acc, key, feature_dim);
    }
  }
  Features f;
  for (const auto& [idx, v] : acc)
    if (v != 0.0) f.entries.emplace_back(idx, v);
  return f;
}

namespace {

// Unnormalized projection z = P^T f.
std::vector<double> project(const Features& f, const EncoderParams& params) {
  std::vector<double> z(params.embed_dim, 0.0);
  for (const auto& [idx, x] : f.entries) {
    const double* r = params.row(idx);
    for (std::size_t e = 0; e < params.embed_dim; ++e) z[e] += x * r[e];
  }
  return z;
}

double norm(const std::vector<double>& v) { return std::sqrt(dot(v, v)); }

constexpr double kMinNorm = 1e-12;

std::vector<double> fallback_direction(std::size_t dim) {
  return std::vector<double>(dim, 1.0 / std::sqrt(static_cast<double>(dim)));
}

}  // namespace

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

Embedding embed_features(const Features& features, const EncoderParams& params) {
  std::vector<double> z = project(features, params);
  const double n = norm(z);
  if (features.empty() || !(n > kMinNorm)) return {fallback_direction(params.embed_dim), true};
  for (double& v : z) v /= n;
  return {std::move(z), false};
}

Embedding encode(std::string_view text, const EncoderParams& params) {
  return embed_features(featurize(text, params.feature_dim, params.ngram_max), params);
}

double mnrl_loss(const Matrix& sims, double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw ValidationError("tau must be positive");
  const std::size_t b = sims.size();
  if (b == 0) throw ValidationError("similarity matrix is empty");
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    if (sims[i].size() != b) throw ValidationError("similarity matrix is not square");
    double hi = -INFINITY;
    for (double s : sims[i]) {
      if (!std::isfinite(s)) throw ValidationError("similarity matrix has non-finite entries");
      hi = std::max(hi, s / tau);
    }
    double acc = 0.0;
    for (double s : sims[i]) acc += std::exp(s / tau - hi);
    total += std::max(0.0, hi + std::log(acc) - sims[i][i] / tau);
  }
  return total / static_cast<double>(b);
}

double batch_loss(const EncoderParams& params, const std::vector<Features>& queries,
                  const std::vector<Features>& positives, ProjectionGrad* grad) {
  const std::size_t b = queries.size();
  if (b == 0 || positives.size() != b) throw ValidationError("batch needs matching non-empty sides");
  const std::size_t d = params.embed_dim;

  struct Side {
    std::vector<double> z;
    double n = 0.0;
    std::vector<double> u;
    bool live = false;
  };
  auto embed_side = [&](const std::vector<Features>& fs) {
    std::vector<Side> out(fs.size());
    for (std::size_t i = 0; i < fs.size(); ++i) {
      out[i].z = project(fs[i], params);
      out[i].n = norm(out[i].z);
      out[i].live = !fs[i].empty() && out[i].n > kMinNorm;
      if (out[i].live) {
        out[i].u = out[i].z;
        for (double& v : out[i].u) v /= out[i].n;
      } else {
        out[i].u = fallback_direction(d);
      }
    }
    return out;
  };
  const std::vector<Side> q = embed_side(queries);
  const std::vector<Side> c = embed_side(positives);

  Matrix sims(b, std::vector<double>(b));
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t k = 0; k < b; ++k) sims[i][k] = dot(q[i].u, c[k].u);
  const double loss = mnrl_loss(sims, params.tau);
  if (!grad) return loss;

  // dL/dS[i][k] = (softmax_i[k] - [i == k]) / (B tau)
  const double tau = params.tau;
  Matrix ds(b, std::vector<double>(b));
  for (std::size_t i = 0; i < b; ++i) {
    double hi = -INFINITY;
    for (double s : sims[i]) hi = std::max(hi, s / tau);
    double z = 0.0;
    for (std::size_t k = 0; k < b; ++k) z += std::exp(sims[i][k] / tau - hi);
    for (std::size_t k = 0; k < b; ++k) {
      const double p = std::exp(sims[i][k] / tau - hi) / z;
      ds[i][k] = (p - (i == k ? 1.0 : 0.0)) / (static_cast<double>(b) * tau);
    }
  }

  std::unordered_map<std::uint32_t, std::size_t> slot;
  grad->rows.clear();
  grad->values.clear();
  auto accumulate = [&](const Features& f, const Side& s, const std::vector<double>& du) {
    if (!s.live) return;
    // Back through normalization: dz = (du - (du . u) u) / |z|
    const double proj = dot(du, s.u);
    std::vector<double> dz(d);
    for (std::size_t e = 0; e < d; ++e) dz[e] = (du[e] - proj * s.u[e]) / s.n;
    for (const auto& [idx, x] : f.entries) {
      auto [it, inserted] = slot.emplace(idx, grad->rows.size());
      if (inserted) {
        grad->rows.push_back(idx);
        grad->values.resize(grad->values.size() + d, 0.0);
      }
      double* g = grad->values.data() + it->second * d;
      for (std::size_t e = 0; e < d; ++e) g[e] += x * dz[e];
    }
  };
  for (std::size_t i = 0; i < b; ++i) {
    std::vector<double> du(d, 0.0);
    for (std::size_t k = 0; k < b; ++k)
      for (std::size_t e = 0; e < d; ++e) du[e] += ds[i][k] * c[k].u[e];
    accumulate(queries[i], q[i], du);
  }
  for (std::size_t k = 0; k < b; ++k) {
    std::vector<double> dw(d, 0.0);
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t e = 0; e < d; ++e) dw[e] += ds[i][k] * q[i].u[e];
    accumulate(positives[k], c[k], dw);
  }
  return loss;
}

TrainConfig TrainConfig::reference() {
  TrainConfig c;
  c.batch_size = 16;
  c.epochs = 1;
  c.learning_rate = 2e-5;
  c.warmup_ratio = 0.1;
  return c;
}

TrainResult train_encoder(const std::vector<TrainingPair>& pairs, const TrainConfig& config) {
  return train_encoder(pairs, config,
                       EncoderParams::random(config.feature_dim, config.embed_dim, config.tau,
                                             config.seed, config.ngram_max));
}

TrainResult train_encoder(const std::vector<TrainingPair>& pairs, const TrainConfig& config,
                          EncoderParams initial) {
  if (pairs.empty()) throw ValidationError("no training pairs");
  if (config.batch_size < 2) throw ValidationError("batch size must be >= 2 for in-batch negatives");
  if (config.batch_size > pairs.size())
    throw ValidationError("batch size " + std::to_string(config.batch_size) + " exceeds " +
                          std::to_string(pairs.size()) + " pairs");
  if (!(config.learning_rate > 0.0)) throw ValidationError("learning rate must be positive");
  initial.validate();

  TrainResult result;
  result.params = std::move(initial);
  EncoderParams& params = result.params;

  std::vector<Features> qf;
  std::vector<Features> pf;
  qf.reserve(pairs.size());
  pf.reserve(pairs.size());
  for (const auto& [query, page] : pairs) {
    qf.push_back(featurize(query, params.feature_dim, params.ngram_max));
    pf.push_back(featurize(page, params.feature_dim, params.ngram_max));
  }

  auto batches_for = [&](std::size_t epoch) {
    std::vector<std::size_t> order(pairs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(config.seed, "epoch-" + std::to_string(epoch)));
    rng.shuffle(order);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t s = 0; s + 2 <= order.size(); s += config.batch_size) {
      const std::size_t e = std::min(order.size(), s + config.batch_size);
      out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(s),
                       order.begin() + static_cast<std::ptrdiff_t>(e));
    }
    if (out.size() > 1 && out.back().size() < 2) out.pop_back();
    return out;
  };
  auto gather = [](const std::vector<Features>& all, const std::vector<std::size_t>& idx) {
    std::vector<Features> out;
    out.reserve(idx.size());
    for (std::size_t i : idx) out.push_back(all[i]);
    return out;
  };

  {
    const auto batches = batches_for(1);
    double sum = 0.0;
    for (const auto& bt : batches) sum += batch_loss(params, gather(qf, bt), gather(pf, bt));
    result.trace.push_back({0, sum / static_cast<double>(batches.size())});
  }

  const std::size_t steps_per_epoch = batches_for(1).size();
  const std::size_t total_steps = steps_per_epoch * config.epochs;
  const auto warmup_steps = static_cast<std::size_t>(config.warmup_ratio * static_cast<double>(total_steps));
  std::size_t step = 0;
  ProjectionGrad grad;
  // Rows touched by the last applied update and their previous values, so a step
  // that leaves the encoder unusable can be undone.
  std::vector<std::uint32_t> saved_rows;
  std::vector<double> saved;
  const std::size_t d = params.embed_dim;
  auto undo = [&] {
    for (std::size_t r = 0; r < saved_rows.size(); ++r)
      std::copy(saved.begin() + static_cast<std::ptrdiff_t>(r * d),
                saved.begin() + static_cast<std::ptrdiff_t>((r + 1) * d), params.row(saved_rows[r]));
  };

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto batches = batches_for(epoch);
    double sum = 0.0;
    for (const auto& bt : batches) {
      double loss = NAN;
      try {
        loss = batch_loss(params, gather(qf, bt), gather(pf, bt), &grad);
      } catch (const ValidationError&) {
        loss = NAN;
      }
      if (!std::isfinite(loss)) {
        undo();
        result.diverged = true;
        result.error = "non-finite loss at step " + std::to_string(step);
        return result;
      }
      sum += loss;
      double lr = config.learning_rate;
      if (step < warmup_steps) lr *= static_cast<double>(step + 1) / static_cast<double>(warmup_steps + 1);
      saved_rows = grad.rows;
      saved.assign(grad.rows.size() * d, 0.0);
      bool finite = true;
      for (std::size_t r = 0; r < grad.rows.size(); ++r) {
        double* row = params.row(grad.rows[r]);
        std::copy(row, row + d, saved.begin() + static_cast<std::ptrdiff_t>(r * d));
        for (std::size_t e = 0; e < d; ++e) {
          row[e] -= lr * grad.values[r * d + e];
          finite = finite && std::isfinite(row[e]);
        }
      }
      if (!finite) {
        undo();
        result.diverged = true;
        result.error = "non-finite parameters after step " + std::to_string(step);
        return result;
      }
      ++step;
    }
    result.trace.push_back({epoch, sum / static_cast<double>(batches.size())});
  }
  return result;
}

namespace {

constexpr char kMagic[8] = {'P', 'G', 'Q', 'A', 'E', 'N', 'C', '\0'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "encoder files are little-endian");

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T take(std::istream& in) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v))
    throw ValidationError("encoder file truncated");
  return v;
}

}  // namespace

void write_params(std::ostream& out, const EncoderParams& params) {
  params.validate();
  out.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kVersion);
  put<std::uint64_t>(out, params.feature_dim);
  put<std::uint64_t>(out, params.embed_dim);
  put<double>(out, params.tau);
  put<std::uint64_t>(out, params.seed);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.ngram_max));
  out.write(reinterpret_cast<const char*>(params.projection.data()),
            static_cast<std::streamsize>(params.projection.size() * sizeof(double)));
  if (!out) throw Error("failed writing encoder parameters");
}

EncoderParams read_params(std::istream& in) {
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    throw ValidationError("not an encoder file (bad magic)");
  const auto version = take<std::uint32_t>(in);
  if (version != kVersion) throw ValidationError("unsupported encoder file version " + std::to_string(version));
  EncoderParams p;
  p.feature_dim = take<std::uint64_t>(in);
  p.embed_dim = take<std::uint64_t>(in);
  p.tau = take<double>(in);
  p.seed = take<std::uint64_t>(in);
  p.ngram_max = static_cast<int>(take<std::uint32_t>(in));
  if (p.feature_dim == 0 || p.embed_dim == 0 || p.feature_dim > (1u << 26) || p.embed_dim > 65536)
    throw ValidationError("encoder file has implausible dimensions");
  p.projection.resize(p.feature_dim * p.embed_dim);
  if (!in.read(reinterpret_cast<char*>(p.projection.data()),
               static_cast<std::streamsize>(p.projection.size() * sizeof(double))))
    throw ValidationError("encoder file truncated");
  p.validate();
  return p;
}

void save_params(const std::string& path, const EncoderParams& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path + " for writing");
  write_params(out, params);
}

EncoderParams load_params(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("cannot open encoder file " + path);
  return read_params(in);
}

std::string loss_trace_csv(const std::vector<EpochLoss>& trace) {
  std::string out = "epoch,mean_loss\n";
  char buf[64];
  for (const auto& row : trace) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g\n", row.epoch, row.mean_loss);
    out += buf;
  }
  return out;
}

PageIndex index_document(const ingest::Document& doc, const EncoderParams& params) {
  PageIndex index;
  for (const auto& page : doc.pages) {
    const std::string text = page.text();
    index.pages.push_back(encode(text, params));
    index.token_lengths.push_back(count_tokens(text));
  }
  return index;
}

std::vector<ScoredPage> score_pages(const PageIndex& index, const std::vector<double>& query) {
  std::vector<ScoredPage> out;
  out.reserve(index.pages.size());
  for (std::size_t i = 0; i < index.pages.size(); ++i)
    out.push_back({static_cast<int>(i + 1), dot(query, index.pages[i].values), index.token_lengths[i]});
  std::sort(out.begin(), out.end(), [](const ScoredPage& a, const ScoredPage& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.page_no < b.page_no;
  });
  return out;
}

std::vector<ScoredPage> score_pages(const ingest::Document& doc, std::string_view query,
                                    const EncoderParams& params) {
  if (doc.pages.empty()) throw ValidationError("document " + doc.doc_id + " has no pages");
  return score_pages(index_document(doc, params), encode(query, params).values);
}

ContextSelection select_context(const std::vector<ScoredPage>& ranked, std::size_t budget,
                                std::size_t k_top) {
  if (budget == 0) throw ValidationError("context budget must be >= 1");
  if (k_top == 0) throw ValidationError("k_top must be >= 1");
  ContextSelection sel;
  sel.budget = budget;
  if (ranked.empty()) return sel;

  if (ranked.front().token_length > budget) {
    sel.pages = {ranked.front().page_no};
    sel.total_tokens = budget;
    sel.truncated = true;
    return sel;
  }

  std::map<int, const ScoredPage*> by_page;
  for (const auto& p : ranked) by_page.emplace(p.page_no, &p);

  std::map<int, bool> chosen;
  std::size_t remaining = budget;
  auto take_page = [&](const ScoredPage& p) {
    chosen[p.page_no] = true;
    remaining -= p.token_length;
    sel.total_tokens += p.token_length;
  };

  std::size_t seeds = 0;
  for (const auto& p : ranked) {
    if (seeds == k_top) break;
    if (chosen.count(p.page_no) || p.token_length > remaining) continue;
    take_page(p);
    ++seeds;
  }

  // Frontier as a max-heap on (score, -page_no). The remaining budget only
  // shrinks, so a neighbour that does not fit now never will.
  auto worse = [](const ScoredPage* a, const ScoredPage* b) {
    if (a->score != b->score) return a->score < b->score;
    return a->page_no > b->page_no;
  };
  std::priority_queue<const ScoredPage*, std::vector<const ScoredPage*>, decltype(worse)> frontier(worse);
  auto push_neighbours = [&](int page_no) {
    for (int n : {page_no - 1, page_no + 1}) {
      auto it = by_page.find(n);
      if (it != by_page.end() && !chosen.count(n)) frontier.push(it->second);
    }
  };
  for (const auto& [page_no, _] : chosen) push_neighbours(page_no);

  while (!frontier.empty()) {
    const ScoredPage* p = frontier.top();
    frontier.pop();
    if (chosen.count(p->page_no) || p->token_length > remaining) continue;
    take_page(*p);
    push_neighbours(p->page_no);
  }

  for (const auto& [page_no, _] : chosen) sel.pages.push_back(page_no);
  return sel;
}

}  // namespace pgqa::finder
