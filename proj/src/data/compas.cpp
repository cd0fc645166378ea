// Copyright 2026 The CDEP Authors
// SPDX-License-Identifier: Apache-2.0

#include <array>
#include <charconv>
#include <cmath>
#include <optional>
#include <fstream>
#include <sstream>

#include "cdep/data.hpp"
#include "cdep/random.hpp"

namespace cdep {

namespace {

const std::vector<std::string> kFeatureNames = {
    "age_<25",        "age_25-45",      "age_>45",        "sex_male",
    "race_black",     "race_white",     "felony",         "priors_z",
    "charge_Drugs",   "charge_Driving", "charge_Violence", "charge_Robbery",
    "charge_Other"};
constexpr std::size_t kRaceBlackColumn = 4;
constexpr std::size_t kPriorsColumn = 7;
constexpr std::size_t kChargeColumn = 8;

const std::vector<std::string> kCategories = {"Drugs", "Driving", "Violence", "Robbery", "Other"};

// Checked in order; the first category with a matching keyword wins.
const std::vector<std::pair<std::string, std::vector<std::string>>> kKeywords = {
    {"Violence", {"Battery", "Assault", "Violence", "Abuse"}},
    {"Robbery", {"Robbery", "Burglary", "Theft", "Stolen", "Larceny"}},
    {"Drugs",
     {"Drug", "Cocaine", "Cannabis", "Heroin", "Marijuana", "Methamph", "Oxycodone",
      "Controlled", "Possession", "Deliver", "Traffick", "Paraphernalia"}},
    {"Driving", {"Driving", "Driver", "License", "DUI", "Vehicle", "Traffic"}},
};

std::optional<long> parse_int(const std::string& s) {
  long v = 0;
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end || s.empty()) return std::nullopt;
  return v;
}

struct Record {
  std::array<double, 13> features{};
  std::size_t label = 0;
  std::size_t race = 0;  // 0 black, 1 white
};

LabeledDataset make_split(const std::vector<Record>& recs, std::span<const std::size_t> rows,
                          const std::string& split) {
  LabeledDataset d;
  const std::size_t n = rows.size();
  std::vector<double> x(n * kFeatureNames.size());
  for (std::size_t i = 0; i < n; ++i) {
    const Record& r = recs[rows[i]];
    std::copy(r.features.begin(), r.features.end(), x.begin() + static_cast<std::ptrdiff_t>(i * 13));
    d.labels.push_back(r.label);
    d.groups.push_back(r.race);
  }
  d.inputs = Tensor({n, kFeatureNames.size()}, std::move(x));
  d.n_classes = 2;
  d.split = split;
  d.group_names = {"black", "white"};
  d.feature_names = kFeatureNames;
  return d;
}

}  // namespace

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  bool any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
      continue;
    }
    if (c == '"') {
      quoted = true;
      any = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
      any = true;
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      if (any || !field.empty()) {
        row.push_back(std::move(field));
        rows.push_back(std::move(row));
      }
      row.clear();
      field.clear();
      any = false;
    } else {
      field += c;
      any = true;
    }
  }
  if (quoted) throw DataError("csv: unterminated quoted field");
  if (any || !field.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

FieldMap default_compas_fields() {
  return {{"age", "age"},
          {"sex", "sex"},
          {"race", "race"},
          {"charge_degree", "c_charge_degree"},
          {"priors_count", "priors_count"},
          {"charge_desc", "c_charge_desc"},
          {"recidivated", "two_year_recid"},
          {"days_b_screening_arrest", "days_b_screening_arrest"},
          {"is_recid", "is_recid"},
          {"score_text", "score_text"}};
}

std::string charge_category(const std::string& description) {
  for (const auto& [category, words] : kKeywords) {
    for (const auto& w : words) {
      if (description.find(w) != std::string::npos) return category;
    }
  }
  return "Other";
}

std::string age_band(int age) {
  if (age < 25) return "<25";
  if (age <= 45) return "25-45";
  return ">45";
}

CompasSplits load_compas(const std::string& csv_path, std::uint64_t seed,
                         const FieldMap& fields) {
  std::ifstream in(csv_path, std::ios::binary);
  if (!in) throw DataError("cannot open COMPAS file " + csv_path);
  std::stringstream ss;
  ss << in.rdbuf();
  const auto table = parse_csv(ss.str());
  if (table.empty()) throw DataError(csv_path + ": empty file");

  const auto& header = table.front();
  std::map<std::string, std::size_t> col;
  std::string missing;
  for (const auto& [logical, name] : default_compas_fields()) {
    auto it = fields.find(logical);
    const std::string& column = it == fields.end() ? name : it->second;
    std::size_t idx = header.size();
    for (std::size_t j = 0; j < header.size(); ++j) {
      if (header[j] == column) {
        idx = j;
        break;
      }
    }
    if (idx == header.size()) {
      missing += (missing.empty() ? "" : ", ") + column;
    } else {
      col[logical] = idx;
    }
  }
  if (!missing.empty()) throw DataError(csv_path + ": missing required columns: " + missing);

  CompasSplits out;
  std::vector<Record> recs;
  for (std::size_t r = 1; r < table.size(); ++r) {
    const auto& row = table[r];
    ++out.report.rows;
    if (row.size() != header.size()) {
      ++out.report.unparseable;
      continue;
    }
    auto f = [&](const char* logical) -> const std::string& { return row[col.at(logical)]; };
    const auto age = parse_int(f("age"));
    const auto prior = parse_int(f("priors_count"));
    const auto recid = parse_int(f("recidivated"));
    const auto is_recid = parse_int(f("is_recid"));
    const auto& days_text = f("days_b_screening_arrest");
    const auto days = parse_int(days_text);
    if (!age || !prior || !recid || !is_recid || (!days && !days_text.empty()) ||
        (*recid != 0 && *recid != 1)) {
      ++out.report.unparseable;
      continue;
    }
    if (!days || *days < -30 || *days > 30 || *is_recid == -1 || f("charge_degree") == "O" ||
        f("score_text") == "N/A") {
      ++out.report.screened_out;
      continue;
    }
    ++out.report.kept_all_races;
    const std::string& race = f("race");
    if (race != "African-American" && race != "Caucasian") continue;

    Record rec;
    const std::string band = age_band(static_cast<int>(*age));
    rec.features[0] = band == "<25";
    rec.features[1] = band == "25-45";
    rec.features[2] = band == ">45";
    rec.features[3] = f("sex") == "Male";
    rec.race = race == "African-American" ? 0 : 1;
    rec.features[kRaceBlackColumn] = rec.race == 0;
    rec.features[kRaceBlackColumn + 1] = rec.race == 1;
    rec.features[6] = f("charge_degree") == "F";
    rec.features[kPriorsColumn] = static_cast<double>(*prior);
    const std::string cat = charge_category(f("charge_desc"));
    for (std::size_t c = 0; c < kCategories.size(); ++c) {
      rec.features[kChargeColumn + c] = cat == kCategories[c];
    }
    rec.label = static_cast<std::size_t>(*recid);
    recs.push_back(rec);
  }
  out.report.kept = recs.size();
  if (recs.size() < 10) throw DataError(csv_path + ": too few usable rows");

  // Seeded Fisher-Yates permutation, then 80/10/10.
  std::vector<std::size_t> perm(recs.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  Rng rng = make_rng(seed, Stream::kSplit);
  for (std::size_t i = perm.size() - 1; i > 0; --i) {
    std::swap(perm[i], perm[uniform_index(rng, i + 1)]);
  }
  const std::size_t n = perm.size();
  const std::size_t n_train = static_cast<std::size_t>(std::llround(0.8 * static_cast<double>(n)));
  const std::size_t n_val = static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(n)));
  const std::span<const std::size_t> all(perm);

  // Priors count standardized with training statistics.
  double mean = 0.0;
  double sq = 0.0;
  for (std::size_t i = 0; i < n_train; ++i) mean += recs[perm[i]].features[kPriorsColumn];
  mean /= static_cast<double>(n_train);
  for (std::size_t i = 0; i < n_train; ++i) {
    const double d = recs[perm[i]].features[kPriorsColumn] - mean;
    sq += d * d;
  }
  const double sd = std::sqrt(sq / static_cast<double>(n_train));
  for (auto& rec : recs) {
    rec.features[kPriorsColumn] = sd > 0.0 ? (rec.features[kPriorsColumn] - mean) / sd : 0.0;
  }

  out.train = make_split(recs, all.subspan(0, n_train), "train");
  out.val = make_split(recs, all.subspan(n_train, n_val), "val");
  out.test = make_split(recs, all.subspan(n_train + n_val), "test");
  out.race_columns = {kRaceBlackColumn, kRaceBlackColumn + 1};
  return out;
}

}  // namespace cdep
