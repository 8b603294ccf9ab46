/*
 * Copyright 2026 The pgpe Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 *
 */

#include "pgpe/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <climits>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <unordered_map>

#include <spdlog/spdlog.h>

namespace pgpe {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string_view trim(std::string_view s)
{
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

std::vector<std::string_view> split_row(std::string_view line)
{
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        const std::size_t comma = line.find(',', start);
        if (comma == std::string_view::npos) {
            out.push_back(trim(line.substr(start)));
            break;
        }
        out.push_back(trim(line.substr(start, comma - start)));
        start = comma + 1;
    }
    return out;
}

std::optional<double> parse_real(std::string_view cell)
{
    double v = 0.0;
    const auto* end = cell.data() + cell.size();
    const auto [ptr, ec] = std::from_chars(cell.data(), end, v);
    if (ec != std::errc{} || ptr != end || !std::isfinite(v)) return std::nullopt;
    return v;
}

std::optional<int> parse_int(std::string_view cell)
{
    int v = 0;
    const auto* end = cell.data() + cell.size();
    const auto [ptr, ec] = std::from_chars(cell.data(), end, v);
    if (ec != std::errc{} || ptr != end) return std::nullopt;
    return v;
}

/// "m<k>_..." -> k
std::optional<int> modality_tag(std::string_view name)
{
    if (name.size() < 3 || name[0] != 'm') return std::nullopt;
    const std::size_t us = name.find('_');
    if (us == std::string_view::npos || us < 2 || us + 1 >= name.size()) return std::nullopt;
    return parse_int(name.substr(1, us - 1));
}

bool valid_group_label(std::string_view g)
{
    return g.empty() || g == "CN" || g == "CN->MCI" || g == "CN→MCI" || g == "MCI" || g == "AD";
}

void append_real(std::string& out, double v)
{
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    out.append(buf, ptr);
}

} // namespace

const Subject* Cohort::find(const std::string& id) const
{
    for (const auto& s : subjects)
        if (s.id == id) return &s;
    return nullptr;
}

Cohort read_cohort(std::istream& in, const std::string& source)
{
    Cohort cohort;
    std::string line;
    int line_no = 0;
    bool have_header = false;
    int col_subject = -1, col_visit = -1, col_group = -1, col_score = -1;
    std::vector<int> feature_cols;
    std::size_t n_cols = 0;
    std::unordered_map<std::string, std::size_t> subject_pos;

    auto fail = [&](const std::string& what) {
        throw DataError(source + ":" + std::to_string(line_no) + ": " + what);
    };

    while (std::getline(in, line)) {
        ++line_no;
        const std::string_view view = trim(line);
        if (view.empty() || view.front() == '#') continue;
        const auto cells = split_row(view);

        if (!have_header) {
            have_header = true;
            n_cols = cells.size();
            for (std::size_t c = 0; c < cells.size(); ++c) {
                const auto name = cells[c];
                auto set_once = [&](int& slot) {
                    if (slot >= 0) fail("duplicate column '" + std::string(name) + "'");
                    slot = static_cast<int>(c);
                };
                if (name == "subject_id") set_once(col_subject);
                else if (name == "visit_index") set_once(col_visit);
                else if (name == "group_label") set_once(col_group);
                else if (name == "adas13") set_once(col_score);
                else if (auto tag = modality_tag(name)) {
                    feature_cols.push_back(static_cast<int>(c));
                    cohort.feature_names.emplace_back(name);
                    cohort.modality.push_back(*tag);
                } else {
                    fail("unrecognized column '" + std::string(name) + "' (features must be prefixed m<k>_)");
                }
            }
            if (col_subject < 0 || col_visit < 0 || col_group < 0 || col_score < 0)
                fail("header must contain subject_id, visit_index, group_label and adas13");
            continue;
        }

        if (cells.size() != n_cols)
            fail("expected " + std::to_string(n_cols) + " fields, found " + std::to_string(cells.size()));

        const std::string id(cells[static_cast<std::size_t>(col_subject)]);
        if (id.empty()) fail("empty subject_id");
        const auto visit_index = parse_int(cells[static_cast<std::size_t>(col_visit)]);
        if (!visit_index || *visit_index < 0) fail("visit_index must be a non-negative integer");
        const std::string group(cells[static_cast<std::size_t>(col_group)]);
        if (!valid_group_label(group)) fail("unknown group_label '" + group + "'");

        Visit v;
        v.visit_index = *visit_index;
        v.features.resize(static_cast<Index>(feature_cols.size()));
        v.feature_source.resize(feature_cols.size());
        for (std::size_t f = 0; f < feature_cols.size(); ++f) {
            const auto cell = cells[static_cast<std::size_t>(feature_cols[f])];
            if (cell.empty()) {
                v.features(static_cast<Index>(f)) = kNaN;
                v.feature_source[f] = FillSource::missing;
                continue;
            }
            const auto value = parse_real(cell);
            if (!value) fail("feature '" + cohort.feature_names[f] + "': cannot parse '" + std::string(cell) + "'");
            v.features(static_cast<Index>(f)) = *value;
            v.feature_source[f] = FillSource::observed;
        }
        const auto score_cell = cells[static_cast<std::size_t>(col_score)];
        if (!score_cell.empty()) {
            const auto score = parse_real(score_cell);
            if (!score) fail("adas13: cannot parse '" + std::string(score_cell) + "'");
            if (*score < 0.0 || *score > kMaxScore)
                fail("adas13 score " + std::string(score_cell) + " outside [0, 85]");
            v.score = *score;
            v.score_source = FillSource::observed;
        }

        auto [it, inserted] = subject_pos.try_emplace(id, cohort.subjects.size());
        if (inserted) {
            cohort.subjects.push_back(Subject{id, group, {}});
        }
        Subject& subject = cohort.subjects[it->second];
        if (!group.empty() && subject.group_label.empty()) subject.group_label = group;
        for (const auto& existing : subject.visits)
            if (existing.visit_index == v.visit_index)
                fail("duplicate visit " + std::to_string(v.visit_index) + " for subject '" + id + "'");
        subject.visits.push_back(std::move(v));
    }
    if (!have_header) throw DataError(source + ": missing header row");

    for (auto& s : cohort.subjects)
        std::sort(s.visits.begin(), s.visits.end(),
                  [](const Visit& a, const Visit& b) { return a.visit_index < b.visit_index; });
    return cohort;
}

Cohort load_cohort(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw DataError("cannot open cohort file '" + path + "'");
    return read_cohort(in, path);
}

void write_cohort(std::ostream& out, const Cohort& cohort, const std::string& comment)
{
    std::string buf;
    if (!comment.empty()) {
        std::istringstream lines(comment);
        std::string l;
        while (std::getline(lines, l)) buf += "# " + l + "\n";
    }
    buf += "subject_id,visit_index,group_label";
    for (const auto& name : cohort.feature_names) buf += "," + name;
    buf += ",adas13\n";
    for (const auto& s : cohort.subjects) {
        for (const auto& v : s.visits) {
            buf += s.id;
            buf += ',' + std::to_string(v.visit_index) + ',' + s.group_label;
            for (Index f = 0; f < v.features.size(); ++f) {
                buf += ',';
                if (v.feature_source[static_cast<std::size_t>(f)] == FillSource::observed) append_real(buf, v.features(f));
            }
            buf += ',';
            if (v.score_observed()) append_real(buf, *v.score);
            buf += '\n';
        }
    }
    out << buf;
}

void save_cohort(const std::string& path, const Cohort& cohort, const std::string& comment)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write cohort file '" + path + "'");
    write_cohort(out, cohort, comment);
    if (!out) throw DataError("failed writing cohort file '" + path + "'");
}

double missing_fraction(const Subject& subject)
{
    std::size_t total = 0, missing = 0;
    for (const auto& v : subject.visits) {
        for (auto src : v.feature_source) {
            ++total;
            missing += src != FillSource::observed;
        }
        ++total;
        missing += !v.score_observed();
    }
    return total ? static_cast<double>(missing) / static_cast<double>(total) : 1.0;
}

double missing_fraction(const Cohort& cohort)
{
    std::size_t total = 0, missing = 0;
    for (const auto& s : cohort.subjects)
        for (const auto& v : s.visits) {
            for (auto src : v.feature_source) {
                ++total;
                missing += src != FillSource::observed;
            }
            ++total;
            missing += !v.score_observed();
        }
    return total ? static_cast<double>(missing) / static_cast<double>(total) : 0.0;
}

Cohort filter_by_missingness(const Cohort& cohort, double max_missing_fraction)
{
    Cohort out;
    out.feature_names = cohort.feature_names;
    out.modality = cohort.modality;
    for (const auto& s : cohort.subjects)
        if (missing_fraction(s) <= max_missing_fraction) out.subjects.push_back(s);
    return out;
}

Cohort select_subjects(const Cohort& cohort, const std::vector<std::string>& ids)
{
    Cohort out;
    out.feature_names = cohort.feature_names;
    out.modality = cohort.modality;
    for (const auto& id : ids) {
        const Subject* s = cohort.find(id);
        if (!s) throw DataError("unknown subject '" + id + "'");
        out.subjects.push_back(*s);
    }
    return out;
}

ImputeMeans fit_impute_means(const Cohort& training)
{
    const Index D = training.n_features();
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(D);
    Eigen::VectorXd count = Eigen::VectorXd::Zero(D);
    double score_sum = 0.0;
    double score_count = 0.0;
    for (const auto& s : training.subjects)
        for (const auto& v : s.visits) {
            for (Index f = 0; f < D; ++f)
                if (v.feature_source[static_cast<std::size_t>(f)] == FillSource::observed) {
                    sum(f) += v.features(f);
                    count(f) += 1.0;
                }
            if (v.score_observed()) {
                score_sum += *v.score;
                score_count += 1.0;
            }
        }
    ImputeMeans m;
    m.feature_mean = (count.array() > 0).select(sum.array() / count.array().max(1.0), 0.0);
    m.score_mean = score_count > 0 ? score_sum / score_count : 0.0;
    return m;
}

Cohort impute_forward(const Cohort& cohort, const ImputeMeans& means)
{
    const Index D = cohort.n_features();
    if (means.feature_mean.size() != D) throw std::invalid_argument("impute_forward: mean vector size mismatch");
    Cohort out = cohort;
    for (auto& s : out.subjects) {
        Eigen::VectorXd last = Eigen::VectorXd::Constant(D, kNaN);
        std::optional<double> last_score;
        for (auto& v : s.visits) {
            for (Index f = 0; f < D; ++f) {
                auto& src = v.feature_source[static_cast<std::size_t>(f)];
                if (src == FillSource::observed) {
                    last(f) = v.features(f);
                } else if (!std::isnan(last(f))) {
                    v.features(f) = last(f);
                    src = FillSource::carried_forward;
                } else {
                    v.features(f) = means.feature_mean(f);
                    src = FillSource::population_mean;
                }
            }
            if (v.score_observed()) {
                last_score = v.score;
            } else if (last_score) {
                v.score = last_score;
                v.score_source = FillSource::carried_forward;
            } else {
                v.score = means.score_mean;
                v.score_source = FillSource::population_mean;
            }
        }
    }
    return out;
}

NormStats fit_norm(const Cohort& imputed_training)
{
    const Index D = imputed_training.n_features();
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(D);
    Eigen::VectorXd sq = Eigen::VectorXd::Zero(D);
    double n = 0.0;
    double ssum = 0.0, ssq = 0.0, sn = 0.0;
    for (const auto& s : imputed_training.subjects)
        for (const auto& v : s.visits) {
            if (!v.features.allFinite()) throw DataError("fit_norm: cohort is not imputed (subject '" + s.id + "')");
            sum += v.features;
            n += 1.0;
            if (v.score_defined()) {
                ssum += *v.score;
                sn += 1.0;
            }
        }
    if (n == 0.0) throw DataError("fit_norm: no visits in training data");
    NormStats st;
    st.mean = sum / n;
    for (const auto& s : imputed_training.subjects)
        for (const auto& v : s.visits) {
            sq += (v.features - st.mean).cwiseAbs2();
            if (v.score_defined()) ssq += (*v.score - ssum / sn) * (*v.score - ssum / sn);
        }
    st.std = (sq / n).cwiseSqrt();
    for (Index f = 0; f < D; ++f) {
        if (st.std(f) > 1e-12)
            st.kept.push_back(f);
        else
            st.dropped.push_back(f);
    }
    if (sn > 0) {
        st.score_mean = ssum / sn;
        const double sd = std::sqrt(ssq / sn);
        st.score_std = sd > 1e-12 ? sd : 1.0;
    }
    return st;
}

Cohort apply_norm(const Cohort& imputed, const NormStats& stats)
{
    if (stats.mean.size() != imputed.n_features()) throw std::invalid_argument("apply_norm: statistics size mismatch");
    const auto& kept = stats.kept;
    Cohort out;
    for (Index f : kept) {
        out.feature_names.push_back(imputed.feature_names[static_cast<std::size_t>(f)]);
        out.modality.push_back(imputed.modality[static_cast<std::size_t>(f)]);
    }
    out.subjects.reserve(imputed.subjects.size());
    for (const auto& s : imputed.subjects) {
        Subject ns{s.id, s.group_label, {}};
        ns.visits.reserve(s.visits.size());
        for (const auto& v : s.visits) {
            Visit nv;
            nv.visit_index = v.visit_index;
            nv.score = v.score;
            nv.score_source = v.score_source;
            nv.features.resize(static_cast<Index>(kept.size()));
            nv.feature_source.resize(kept.size());
            for (std::size_t j = 0; j < kept.size(); ++j) {
                const Index f = kept[j];
                nv.features(static_cast<Index>(j)) = (v.features(f) - stats.mean(f)) / stats.std(f);
                nv.feature_source[j] = v.feature_source[static_cast<std::size_t>(f)];
            }
            ns.visits.push_back(std::move(nv));
        }
        out.subjects.push_back(std::move(ns));
    }
    return out;
}

std::vector<WindowSample> build_windows(const Subject& subject, const NormStats& stats, FeaturePreset preset)
{
    std::vector<WindowSample> out;
    const auto& visits = subject.visits;
    const bool any_defined = std::any_of(visits.begin(), visits.end(), [](const Visit& v) { return v.score_defined(); });
    if (!any_defined) {
        spdlog::warn("subject '{}' has no scored visits; skipped", subject.id);
        return out;
    }

    // latest observed score at or before visit index `idx`
    auto latest_observed = [&](int idx) -> std::optional<double> {
        std::optional<double> s;
        for (const auto& v : visits) {
            if (v.visit_index > idx) break;
            if (v.score_observed()) s = v.score;
        }
        return s;
    };

    for (const auto& v : visits) {
        if (!v.score_defined()) continue;
        if (!v.features.allFinite()) throw DataError("build_windows: subject '" + subject.id + "' is not imputed");
        WindowSample w;
        w.subject_id = subject.id;
        w.t = v.visit_index;
        w.y_t = *v.score;
        const double y_norm = (w.y_t - stats.score_mean) / stats.score_std;
        if (preset == FeaturePreset::vis) {
            w.x = Eigen::VectorXd::Constant(1, y_norm);
        } else {
            w.x.resize(v.features.size() + 1);
            w.x << v.features, y_norm;
        }
        for (Index k = 0; k < kHorizons; ++k) {
            const int target = v.visit_index + static_cast<int>(k) + 1;
            const auto it = std::find_if(visits.begin(), visits.end(),
                                         [&](const Visit& u) { return u.visit_index == target; });
            if (it != visits.end() && it->score_observed()) {
                w.y_future(k) = *it->score;
                w.mask(k) = true;
            } else {
                const auto s = latest_observed(target);
                w.y_future(k) = s ? *s : w.y_t;
                w.mask(k) = false;
            }
        }
        out.push_back(std::move(w));
    }
    return out;
}

Subject truncate(const Subject& subject, int t)
{
    Subject out{subject.id, subject.group_label, {}};
    for (const auto& v : subject.visits)
        if (v.visit_index <= t) out.visits.push_back(v);
    return out;
}

FeatureGrouping input_grouping(const Cohort& normalized, FeaturePreset preset, KernelKind kernel)
{
    if (preset == FeaturePreset::vis) return FeatureGrouping::isotropic(1);
    const Index D = normalized.n_features() + 1;
    if (kernel == KernelKind::iso) return FeatureGrouping::isotropic(D);
    std::vector<int> tags = normalized.modality;
    tags.push_back(INT_MAX);  // y_t gets its own length-scale
    return FeatureGrouping::from_tags(tags);
}

} // namespace pgpe
