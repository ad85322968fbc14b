#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cstddef>
#include <istream>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "sjm/csv.hpp"
#include "sjm/errors.hpp"

namespace sjm {

// One trial participant. covariates[0] is the binary treatment indicator;
// the remaining entries are the baseline covariates.
struct Subject {
  std::string id;
  Eigen::VectorXd covariates;
  double followup_time = 0.0;  // min(event time, censoring time)
  bool event = false;          // true when the terminal event was observed
};

// One longitudinal measurement. Visits are stored grouped by subject, so the
// subject id lives on the grouping, not here.
struct Visit {
  double time = 0.0;
  double value = 0.0;
};

struct DataSummary {
  std::size_t n_subjects = 0;
  std::size_t covariate_dim = 0;
  double event_fraction = 0.0;
  double censoring_fraction = 0.0;
  double mean_visits_per_subject = 0.0;
};

// Immutable joint longitudinal-survival dataset. Subjects are held in a
// canonical order (sorted by id) and visits are sorted by time within each
// subject, so identical data always produces identical downstream results
// regardless of input file ordering.
class TrialData {
 public:
  // Validates invariants and canonicalizes ordering. `visits[k]` belongs to
  // `subjects[k]`. When tau is absent it defaults to the maximum over all
  // visit and follow-up times.
  static TrialData from_parts(std::vector<Subject> subjects,
                              std::vector<std::vector<Visit>> visits,
                              std::optional<double> tau = std::nullopt) {
    if (subjects.empty()) throw ValidationError("dataset has no subjects");
    if (visits.size() != subjects.size()) {
      throw ValidationError("visit groups do not match subject count");
    }

    std::vector<std::size_t> order(subjects.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return subjects[a].id < subjects[b].id;
    });

    TrialData data;
    data.subjects_.reserve(subjects.size());
    data.visits_.reserve(subjects.size());
    for (std::size_t k : order) {
      data.subjects_.push_back(std::move(subjects[k]));
      data.visits_.push_back(std::move(visits[k]));
    }

    const Eigen::Index p = data.subjects_.front().covariates.size();
    if (p < 1) throw ValidationError("covariate vector must at least hold the treatment indicator");

    double max_time = 0.0;
    for (std::size_t k = 0; k < data.subjects_.size(); ++k) {
      const Subject& s = data.subjects_[k];
      if (k > 0 && s.id == data.subjects_[k - 1].id) {
        throw ValidationError("duplicate subject id '" + s.id + "'");
      }
      if (s.covariates.size() != p) {
        throw ValidationError("subject '" + s.id + "': covariate length differs from the rest");
      }
      if (!(s.followup_time >= 0.0)) {
        throw ValidationError("subject '" + s.id + "': negative follow-up time");
      }
      const double a = s.covariates[0];
      if (a != 0.0 && a != 1.0) {
        throw ValidationError("subject '" + s.id + "': treatment indicator must be 0 or 1");
      }
      max_time = std::max(max_time, s.followup_time);

      auto& vs = data.visits_[k];
      std::sort(vs.begin(), vs.end(),
                [](const Visit& a_, const Visit& b_) { return a_.time < b_.time; });
      for (std::size_t v = 0; v < vs.size(); ++v) {
        if (!(vs[v].time >= 0.0)) {
          throw ValidationError("subject '" + s.id + "': negative visit time");
        }
        if (v > 0 && !(vs[v].time > vs[v - 1].time)) {
          throw ValidationError("subject '" + s.id + "': duplicate visit time " +
                                csv::format_double(vs[v].time));
        }
        if (!(vs[v].time < s.followup_time)) {
          throw ValidationError("subject '" + s.id + "': visit at t=" +
                                csv::format_double(vs[v].time) +
                                " is not before follow-up end " +
                                csv::format_double(s.followup_time));
        }
        max_time = std::max(max_time, vs[v].time);
      }
    }

    if (tau) {
      if (!(*tau > 0.0)) throw ValidationError("tau must be positive");
      for (std::size_t k = 0; k < data.subjects_.size(); ++k) {
        if (!data.visits_[k].empty() && data.visits_[k].back().time > *tau) {
          throw ValidationError("tau is smaller than the largest visit time");
        }
      }
      data.tau_ = *tau;
    } else {
      data.tau_ = max_time;
      if (!(data.tau_ > 0.0)) throw ValidationError("cannot infer a positive tau");
    }
    return data;
  }

  std::size_t n() const noexcept { return subjects_.size(); }
  std::size_t covariate_dim() const noexcept {
    return static_cast<std::size_t>(subjects_.front().covariates.size());
  }
  double tau() const noexcept { return tau_; }
  const Subject& subject(std::size_t i) const { return subjects_[i]; }
  const std::vector<Visit>& visits(std::size_t i) const { return visits_[i]; }
  const std::vector<Subject>& subjects() const noexcept { return subjects_; }

  std::size_t total_visits() const noexcept {
    std::size_t total = 0;
    for (const auto& vs : visits_) total += vs.size();
    return total;
  }

  std::size_t event_count() const noexcept {
    std::size_t total = 0;
    for (const auto& s : subjects_) total += s.event ? 1 : 0;
    return total;
  }

 private:
  TrialData() = default;

  std::vector<Subject> subjects_;
  std::vector<std::vector<Visit>> visits_;
  double tau_ = 0.0;
};

inline DataSummary summary(const TrialData& data) {
  DataSummary s;
  s.n_subjects = data.n();
  s.covariate_dim = data.covariate_dim();
  s.event_fraction = static_cast<double>(data.event_count()) / static_cast<double>(data.n());
  s.censoring_fraction = 1.0 - s.event_fraction;
  s.mean_visits_per_subject =
      static_cast<double>(data.total_visits()) / static_cast<double>(data.n());
  return s;
}

namespace detail {

inline void check_header(const std::vector<std::string>& got,
                         const std::vector<std::string>& want, const char* what) {
  if (got.size() < want.size()) {
    throw ParseError(std::string(what) + ": header must start with the required columns", 1);
  }
  for (std::size_t k = 0; k < want.size(); ++k) {
    if (got[k] != want[k]) {
      throw ParseError(std::string(what) + ": expected column '" + want[k] + "', got '" + got[k] +
                           "'",
                       1);
    }
  }
}

}  // namespace detail

// Reads the long-format CSV pair described in the file interface:
//   subjects: id,time,event,a,z1,z2,...   visits: id,t,y
// Ingestion additionally requires at least one observed event, since none of
// the downstream fits are defined without one.
inline TrialData ingest(std::istream& subjects_csv, std::istream& visits_csv,
                        std::optional<double> tau = std::nullopt) {
  csv::Table subj_table = csv::read_table(subjects_csv);
  detail::check_header(subj_table.header, {"id", "time", "event", "a"}, "subjects csv");
  const std::size_t n_z = subj_table.header.size() - 4;
  for (std::size_t k = 0; k < n_z; ++k) {
    const std::string want = "z" + std::to_string(k + 1);
    if (subj_table.header[4 + k] != want) {
      throw ParseError("subjects csv: expected covariate column '" + want + "', got '" +
                           subj_table.header[4 + k] + "'",
                       1);
    }
  }

  std::vector<Subject> subjects;
  subjects.reserve(subj_table.rows.size());
  for (std::size_t r = 0; r < subj_table.rows.size(); ++r) {
    const auto& row = subj_table.rows[r];
    const std::size_t line = subj_table.line_numbers[r];
    Subject s;
    s.id = row[0];
    if (s.id.empty()) throw ParseError("empty subject id", line);
    s.followup_time = csv::parse_double(row[1], line);
    const double ev = csv::parse_double(row[2], line);
    if (ev != 0.0 && ev != 1.0) {
      throw ValidationError("subject '" + s.id + "': event must be 0 or 1");
    }
    s.event = ev == 1.0;
    s.covariates.resize(static_cast<Eigen::Index>(1 + n_z));
    s.covariates[0] = csv::parse_double(row[3], line);
    for (std::size_t k = 0; k < n_z; ++k) {
      s.covariates[static_cast<Eigen::Index>(k + 1)] = csv::parse_double(row[4 + k], line);
    }
    subjects.push_back(std::move(s));
  }

  std::unordered_map<std::string, std::size_t> index;
  index.reserve(subjects.size());
  for (std::size_t k = 0; k < subjects.size(); ++k) {
    if (!index.emplace(subjects[k].id, k).second) {
      throw ValidationError("duplicate subject id '" + subjects[k].id + "'");
    }
  }

  csv::Table visit_table = csv::read_table(visits_csv);
  if (visit_table.header != std::vector<std::string>{"id", "t", "y"}) {
    throw ParseError("visits csv: header must be exactly 'id,t,y'", 1);
  }
  std::vector<std::vector<Visit>> visits(subjects.size());
  for (std::size_t r = 0; r < visit_table.rows.size(); ++r) {
    const auto& row = visit_table.rows[r];
    const std::size_t line = visit_table.line_numbers[r];
    auto it = index.find(row[0]);
    if (it == index.end()) {
      throw ReferentialError("visit on line " + std::to_string(line) +
                             " references unknown subject id '" + row[0] + "'");
    }
    Visit v;
    v.time = csv::parse_double(row[1], line);
    v.value = csv::parse_double(row[2], line);
    visits[it->second].push_back(v);
  }

  TrialData data = TrialData::from_parts(std::move(subjects), std::move(visits), tau);
  if (data.event_count() == 0) {
    throw ValidationError("dataset has no observed terminal events");
  }
  return data;
}

// Writes the same CSV pair that ingest() reads, in canonical order and with
// round-trip-exact numbers.
inline void serialize(const TrialData& data, std::ostream& subjects_out,
                      std::ostream& visits_out) {
  const std::size_t n_z = data.covariate_dim() - 1;
  subjects_out << "id,time,event,a";
  for (std::size_t k = 0; k < n_z; ++k) subjects_out << ",z" << (k + 1);
  subjects_out << "\n";
  for (std::size_t i = 0; i < data.n(); ++i) {
    const Subject& s = data.subject(i);
    subjects_out << s.id << ',' << csv::format_double(s.followup_time) << ','
                 << (s.event ? '1' : '0') << ',' << csv::format_double(s.covariates[0]);
    for (std::size_t k = 0; k < n_z; ++k) {
      subjects_out << ',' << csv::format_double(s.covariates[static_cast<Eigen::Index>(k + 1)]);
    }
    subjects_out << "\n";
  }

  visits_out << "id,t,y\n";
  for (std::size_t i = 0; i < data.n(); ++i) {
    for (const Visit& v : data.visits(i)) {
      visits_out << data.subject(i).id << ',' << csv::format_double(v.time) << ','
                 << csv::format_double(v.value) << "\n";
    }
  }
}

}  // namespace sjm
