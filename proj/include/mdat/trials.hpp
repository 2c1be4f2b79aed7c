#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace mdat {

enum class TrialKey { Target, Nontarget, Unknown };

std::string_view to_string(TrialKey k);

struct Trial {
  std::string enroll;
  std::string test;
  TrialKey key = TrialKey::Unknown;

  bool operator==(const Trial&) const = default;
};

struct ScoredTrial {
  std::string enroll;
  std::string test;
  TrialKey key = TrialKey::Unknown;
  double score = 0;
};

using TrialList = std::vector<Trial>;
using TrialScoreSet = std::vector<ScoredTrial>;

/// `enroll_id<TAB>test_id[<TAB>target|nontarget]`
std::string format_trials(const TrialList& trials);
TrialList parse_trials(const std::string& text);
void write_trials(const TrialList& trials, const std::filesystem::path& path);
TrialList read_trials(const std::filesystem::path& path);

/// Trial columns plus the score with 6 decimal places.
std::string format_scores(const TrialScoreSet& scores);
TrialScoreSet parse_scores(const std::string& text);
void write_scores(const TrialScoreSet& scores, const std::filesystem::path& path);
TrialScoreSet read_scores(const std::filesystem::path& path);

}  // namespace mdat
