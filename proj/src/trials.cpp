#include "mdat/trials.hpp"

#include <cmath>
#include <cstdio>

#include "mdat/error.hpp"
#include "mdat/text_io.hpp"

namespace mdat {

std::string_view to_string(TrialKey k) {
  switch (k) {
    case TrialKey::Target: return "target";
    case TrialKey::Nontarget: return "nontarget";
    case TrialKey::Unknown: return "unknown";
  }
  return "unknown";
}

namespace {

TrialKey parse_key(std::string_view s, std::size_t line) {
  if (s == "target") return TrialKey::Target;
  if (s == "nontarget") return TrialKey::Nontarget;
  throw ParseError("trial key must be 'target' or 'nontarget', got '" + std::string(s) + "'", line);
}

void append_trial(std::string& out, const std::string& e, const std::string& t, TrialKey key) {
  out += e;
  out += '\t';
  out += t;
  if (key != TrialKey::Unknown) {
    out += '\t';
    out += to_string(key);
  }
}

}  // namespace

std::string format_trials(const TrialList& trials) {
  std::string out;
  for (const auto& t : trials) {
    append_trial(out, t.enroll, t.test, t.key);
    out += '\n';
  }
  return out;
}

TrialList parse_trials(const std::string& text) {
  TrialList out;
  std::size_t line_no = 0;
  for (auto line : io::split(text, '\n')) {
    ++line_no;
    line = io::trim(line);
    if (line.empty()) continue;
    const auto f = io::split(line, '\t');
    if (f.size() < 2 || f.size() > 3) throw ParseError("expected 2 or 3 tab-separated fields", line_no);
    Trial t{std::string(f[0]), std::string(f[1]), TrialKey::Unknown};
    if (f.size() == 3) t.key = parse_key(f[2], line_no);
    out.push_back(std::move(t));
  }
  return out;
}

void write_trials(const TrialList& trials, const std::filesystem::path& path) {
  io::write_file(path, format_trials(trials));
}

TrialList read_trials(const std::filesystem::path& path) { return parse_trials(io::read_file(path)); }

std::string format_scores(const TrialScoreSet& scores) {
  std::string out;
  char buf[64];
  for (const auto& s : scores) {
    append_trial(out, s.enroll, s.test, s.key);
    // Avoid "-0.000000" so equal scores print identically.
    const double v = std::abs(s.score) < 5e-7 ? 0.0 : s.score;
    std::snprintf(buf, sizeof buf, "\t%.6f\n", v);
    out += buf;
  }
  return out;
}

TrialScoreSet parse_scores(const std::string& text) {
  TrialScoreSet out;
  std::size_t line_no = 0;
  for (auto line : io::split(text, '\n')) {
    ++line_no;
    line = io::trim(line);
    if (line.empty()) continue;
    const auto f = io::split(line, '\t');
    if (f.size() < 3 || f.size() > 4) throw ParseError("expected 3 or 4 tab-separated fields", line_no);
    ScoredTrial s{std::string(f[0]), std::string(f[1]), TrialKey::Unknown, 0.0};
    if (f.size() == 4) s.key = parse_key(f[2], line_no);
    s.score = io::parse_double(f.back(), line_no);
    out.push_back(std::move(s));
  }
  return out;
}

void write_scores(const TrialScoreSet& scores, const std::filesystem::path& path) {
  io::write_file(path, format_scores(scores));
}

TrialScoreSet read_scores(const std::filesystem::path& path) { return parse_scores(io::read_file(path)); }

}  // namespace mdat
