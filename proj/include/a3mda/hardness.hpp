/* Copyright 2026 The A3MDA Lab Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License. */

// Adaptive hardness measurements and the epoch-persistent hardness memory.

#pragma once

#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace a3mda {

using ClassLabel = std::optional<std::size_t>;

enum class HardnessKind {
  kEntropy,               // E
  kBasic,                 // Omega
  kSmooth,                // S
  kComparative,           // H, normalized over the batch
  kComparativeClustered,  // H^c, normalized over same-(pseudo-)class subsets
};

inline const char* to_string(HardnessKind k) {
  switch (k) {
    case HardnessKind::kEntropy: return "E";
    case HardnessKind::kBasic: return "Omega";
    case HardnessKind::kSmooth: return "S";
    case HardnessKind::kComparative: return "H";
    case HardnessKind::kComparativeClustered: return "Hc";
  }
  return "?";
}

inline HardnessKind parse_hardness_kind(const std::string& s) {
  if (s == "E" || s == "entropy") return HardnessKind::kEntropy;
  if (s == "Omega" || s == "basic") return HardnessKind::kBasic;
  if (s == "S" || s == "smooth") return HardnessKind::kSmooth;
  if (s == "H" || s == "comparative") return HardnessKind::kComparative;
  if (s == "Hc" || s == "comparative-clustered") return HardnessKind::kComparativeClustered;
  throw std::invalid_argument("unknown hardness kind '" + s + "'");
}

struct HardnessVector {
  std::vector<double> values;
  HardnessKind kind = HardnessKind::kSmooth;
};

/// Instantaneous hardness: L2 norm of the probability row with entry `z`
/// (true class for source rows, pseudo-class for target rows) zeroed.
inline double basic_ahm(std::span<const double> probs, std::size_t z) {
  if (z >= probs.size()) {
    throw std::out_of_range("basic_ahm: class index " + std::to_string(z) +
                            " out of range for K=" + std::to_string(probs.size()));
  }
  double acc = 0.0;
  for (std::size_t j = 0; j < probs.size(); ++j) {
    if (j != z) acc += probs[j] * probs[j];
  }
  return std::sqrt(acc);
}

/// Exponential smoothing against the previous epoch's value. The first
/// observation of a sample is stored unsmoothed.
inline double smooth_ahm(double omega, std::optional<double> previous, double beta) {
  if (!previous) return omega;
  return beta * *previous + (1.0 - beta) * omega;
}

/// Batch-wise comparative hardness: every value over the batch total. A zero
/// total yields uniform weights.
inline std::vector<double> comparative_ahm(std::span<const double> smooth) {
  if (smooth.empty()) throw std::invalid_argument("comparative_ahm: empty batch");
  double total = 0.0;
  for (double s : smooth) {
    if (s < 0.0) throw std::invalid_argument("comparative_ahm: negative hardness");
    total += s;
  }
  std::vector<double> out(smooth.size());
  for (std::size_t i = 0; i < smooth.size(); ++i) {
    out[i] = total > 0.0 ? smooth[i] / total : 1.0 / static_cast<double>(smooth.size());
  }
  return out;
}

/// Cluster-wise comparative hardness: every value over the total of rows
/// sharing its (pseudo-)class. Rows without a class sit outside every group
/// and receive 0.
inline std::vector<double> comparative_ahm(std::span<const double> smooth,
                                           std::span<const ClassLabel> groups) {
  if (smooth.empty()) throw std::invalid_argument("comparative_ahm: empty batch");
  if (groups.size() != smooth.size()) {
    throw std::invalid_argument("comparative_ahm: group labels do not match batch size");
  }
  std::map<std::size_t, std::pair<double, std::size_t>> totals;
  for (std::size_t i = 0; i < smooth.size(); ++i) {
    if (smooth[i] < 0.0) throw std::invalid_argument("comparative_ahm: negative hardness");
    if (!groups[i]) continue;
    auto& [sum, count] = totals[*groups[i]];
    sum += smooth[i];
    ++count;
  }
  std::vector<double> out(smooth.size(), 0.0);
  for (std::size_t i = 0; i < smooth.size(); ++i) {
    if (!groups[i]) continue;
    const auto& [sum, count] = totals[*groups[i]];
    out[i] = sum > 0.0 ? smooth[i] / sum : 1.0 / static_cast<double>(count);
  }
  return out;
}

/// Shannon entropy in nats, with 0 log 0 taken as 0.
inline double shannon_entropy(std::span<const double> probs) {
  double e = 0.0;
  for (double p : probs) {
    if (p > 0.0) e -= p * std::log(p);
  }
  return e;
}

/// Identifies the domain a sample belongs to: source m (0-based) or target.
/// Orders sources by index, then the target.
class DomainTag {
 public:
  static DomainTag source(std::size_t m) { return DomainTag(static_cast<long>(m)); }
  static DomainTag target() { return DomainTag(-1); }

  bool is_target() const noexcept { return index_ < 0; }
  std::size_t source_index() const { return static_cast<std::size_t>(index_); }

  /// "s1".."sM" (1-based, as in the write-ups) or "t".
  std::string str() const { return is_target() ? "t" : "s" + std::to_string(index_ + 1); }

  static DomainTag parse(const std::string& s) {
    if (s == "t") return target();
    if (s.size() >= 2 && s[0] == 's') {
      const long m = std::stol(s.substr(1));
      if (m >= 1) return source(static_cast<std::size_t>(m - 1));
    }
    throw std::invalid_argument("bad domain tag '" + s + "'");
  }

  friend bool operator<(const DomainTag& a, const DomainTag& b) { return a.order() < b.order(); }
  friend bool operator==(const DomainTag& a, const DomainTag& b) { return a.index_ == b.index_; }

 private:
  explicit DomainTag(long i) : index_(i) {}
  long order() const noexcept { return is_target() ? std::numeric_limits<long>::max() : index_; }
  long index_;
};

struct HardnessRecord {
  DomainTag domain = DomainTag::target();
  std::size_t sample_id = 0;
  double value = 0.0;
};

/// Per-sample store of smoothed hardness, keyed by (domain, dataset index).
///
/// Reads during an epoch see only values committed at the end of earlier
/// epochs; writes go to a pending buffer that advance_epoch() commits.
class HardnessMemory {
 public:
  using Key = std::pair<DomainTag, std::size_t>;

  std::optional<double> previous(DomainTag domain, std::size_t sample_id) const {
    auto it = committed_.find({domain, sample_id});
    if (it == committed_.end()) return std::nullopt;
    return it->second;
  }

  void record(DomainTag domain, std::size_t sample_id, double value) {
    if (!(value >= 0.0 && value <= 1.0)) {
      throw std::invalid_argument("hardness memory value out of [0,1]: " +
                                  std::to_string(value));
    }
    pending_[{domain, sample_id}] = value;
  }

  void advance_epoch() {
    for (const auto& [key, v] : pending_) committed_[key] = v;
    pending_.clear();
    ++epoch_;
  }

  std::size_t epoch() const noexcept { return epoch_; }
  bool empty() const noexcept { return committed_.empty() && pending_.empty(); }

  /// Latest value per key (pending overrides committed), sorted by
  /// (domain, sample id).
  std::vector<HardnessRecord> snapshot() const {
    std::map<Key, double> merged = committed_;
    for (const auto& [key, v] : pending_) merged[key] = v;
    std::vector<HardnessRecord> out;
    out.reserve(merged.size());
    for (const auto& [key, v] : merged) out.push_back({key.first, key.second, v});
    return out;
  }

  void write_csv(std::ostream& os) const {
    os << "domain,sample_id,smooth_hardness\n";
    char buf[64];
    for (const HardnessRecord& r : snapshot()) {
      std::snprintf(buf, sizeof buf, "%.17g", r.value);
      os << r.domain.str() << ',' << r.sample_id << ',' << buf << '\n';
    }
  }

 private:
  std::map<Key, double> committed_;
  std::map<Key, double> pending_;
  std::size_t epoch_ = 0;
};

}  // namespace a3mda
