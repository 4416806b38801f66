#include "pheno/dataset.hpp"

#include <algorithm>
#include <numeric>

#include "pheno/csv.hpp"
#include "pheno/errors.hpp"
#include "pheno/rng.hpp"

namespace pheno {

AssembleResult assemble_labeled_dataset(Crop crop, const std::vector<StationObservation>& obs,
                                        const std::vector<SeasonFeatures>& features) {
    AssembleResult res;
    res.dataset.crop = crop;

    // Stage dates per (station, season).
    std::map<std::pair<std::string, int>, std::map<Date, int>> stage_days;
    std::map<std::pair<std::string, int>, int> matched;
    for (const auto& o : obs) {
        if (o.crop != crop) continue;
        auto& days = stage_days[{o.station_id, o.date.season_year()}];
        const auto [it, inserted] = days.emplace(o.date, o.bbch);
        if (!inserted && it->second != o.bbch)
            throw ValidationError("assemble_labeled_dataset: coincident stages " +
                                  std::to_string(it->second) + " and " + std::to_string(o.bbch) +
                                  " at " + o.station_id + " on " + o.date.iso());
    }

    for (const auto& sf : features) {
        const auto key = std::make_pair(sf.station_id, sf.season);
        const auto stages_it = stage_days.find(key);
        // Clip the sampled window to the season the features claim to cover.
        const Date lo = season_start(sf.season);
        const Date hi = season_start(sf.season + 1) - 1;
        for (std::size_t i = 0; i < sf.days.size(); ++i) {
            const Date day = sf.start + static_cast<std::int64_t>(i);
            if (day < lo || day > hi) continue;
            LabeledSample s;
            s.station_id = sf.station_id;
            s.season = sf.season;
            s.date = day;
            s.doy = day.day_of_year();
            s.features = sf.days[i];
            s.label = kBackgroundLabel;
            if (stages_it != stage_days.end()) {
                const auto d = stages_it->second.find(day);
                if (d != stages_it->second.end()) {
                    s.label = d->second;
                    ++matched[key];
                }
            }
            res.dataset.samples.push_back(std::move(s));
        }
    }

    for (const auto& [key, days] : stage_days) {
        const auto m = matched.find(key);
        const int hit = m == matched.end() ? 0 : m->second;
        res.skipped_observations += static_cast<int>(days.size()) - hit;
    }

    std::vector<int> labels;
    labels.reserve(res.dataset.samples.size());
    for (const auto& s : res.dataset.samples) labels.push_back(s.label);
    if (!labels.empty()) res.dataset.class_weights = compute_class_weights(labels);
    return res;
}

std::map<int, double> compute_class_weights(const std::vector<int>& labels) {
    if (labels.empty()) throw ValidationError("compute_class_weights: no samples");
    std::map<int, int> counts;
    for (int l : labels) ++counts[l];
    const double n = static_cast<double>(labels.size());
    const double k = static_cast<double>(counts.size());
    std::map<int, double> weights;
    for (const auto& [label, count] : counts) weights[label] = n / (k * count);
    return weights;
}

FoldSplit kfold_split(int n, int k, std::uint64_t seed, int inner_k) {
    if (inner_k <= 0) inner_k = k;
    if (n < k) throw ValidationError("kfold_split: n < k");

    auto chunk = [](const std::vector<int>& order, int folds) {
        std::vector<std::vector<int>> out(static_cast<std::size_t>(folds));
        const int n_ = static_cast<int>(order.size());
        const int base = n_ / folds;
        const int extra = n_ % folds;
        int pos = 0;
        for (int f = 0; f < folds; ++f) {
            const int size = base + (f < extra ? 1 : 0);
            out[static_cast<std::size_t>(f)].assign(order.begin() + pos, order.begin() + pos + size);
            pos += size;
        }
        return out;
    };

    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    Rng rng(mix_seed(seed, 0x6f6c64, k));
    rng.shuffle(order);

    FoldSplit split;
    split.seed = seed;
    split.outer = chunk(order, k);

    for (int f = 0; f < k; ++f) {
        std::vector<int> train;
        for (int g = 0; g < k; ++g)
            if (g != f)
                train.insert(train.end(), split.outer[static_cast<std::size_t>(g)].begin(),
                             split.outer[static_cast<std::size_t>(g)].end());
        std::sort(train.begin(), train.end());
        if (static_cast<int>(train.size()) < inner_k)
            throw ValidationError("kfold_split: outer training set smaller than inner k");
        Rng inner_rng(mix_seed(seed, 0x696e6e6572, static_cast<std::uint64_t>(f)));
        inner_rng.shuffle(train);
        split.inner.push_back(chunk(train, inner_k));
    }
    return split;
}

// ---------------------------------------------------------------- csv

std::string serialize_dataset_csv(const LabeledDataset& ds) {
    std::string out = "crop,station_id,season,date,doy";
    for (int f = 0; f < kNumFeatures; ++f) {
        out += ',';
        out += feature_name(f);
    }
    out += ",label\n";
    for (const auto& s : ds.samples) {
        out += crop_name(ds.crop);
        out += ',';
        out += s.station_id;
        out += ',';
        out += std::to_string(s.season);
        out += ',';
        out += s.date.iso();
        out += ',';
        out += std::to_string(s.doy);
        for (int f = 0; f < kNumFeatures; ++f) {
            out += ',';
            out += csv::format_double(s.features[static_cast<std::size_t>(f)]);
        }
        out += ',';
        out += std::to_string(s.label);
        out += '\n';
    }
    return out;
}

LabeledDataset parse_dataset_csv(const std::string& text) {
    const auto lines = csv::split_lines(text);
    if (lines.empty()) throw ParseError("dataset csv: empty file");
    const auto header = csv::split_line(lines[0]);
    if (header.size() != 5 + kNumFeatures + 1)
        throw ParseError("dataset csv: expected " + std::to_string(5 + kNumFeatures + 1) +
                         " columns, found " + std::to_string(header.size()));
    for (int f = 0; f < kNumFeatures; ++f)
        if (header[static_cast<std::size_t>(5 + f)] != feature_name(f))
            throw ParseError("dataset csv: column " + std::to_string(5 + f + 1) +
                             " should be '" + feature_name(f) + "'");

    LabeledDataset ds;
    bool have_crop = false;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        const int line_no = static_cast<int>(i) + 1;
        const auto f = csv::split_line(lines[i]);
        if (f.size() != header.size())
            throw ParseError("line " + std::to_string(line_no) + ": expected " +
                             std::to_string(header.size()) + " fields");
        const auto crop = crop_from_name(f[0]);
        if (!crop)
            throw ValidationError("line " + std::to_string(line_no) + ": unknown crop \"" + f[0] +
                                  "\"");
        if (!have_crop) {
            ds.crop = *crop;
            have_crop = true;
        } else if (*crop != ds.crop) {
            throw ValidationError("line " + std::to_string(line_no) +
                                  ": mixed crops in one dataset file");
        }
        LabeledSample s;
        s.station_id = f[1];
        s.season = csv::parse_int(f[2], line_no, "season");
        s.date = Date::parse(f[3]);
        s.doy = csv::parse_int(f[4], line_no, "doy");
        for (int j = 0; j < kNumFeatures; ++j)
            s.features[static_cast<std::size_t>(j)] =
                csv::parse_double(f[static_cast<std::size_t>(5 + j)], line_no, feature_name(j));
        s.label = csv::parse_int(f.back(), line_no, "label");
        ds.samples.push_back(std::move(s));
    }

    std::vector<int> labels;
    labels.reserve(ds.samples.size());
    for (const auto& s : ds.samples) labels.push_back(s.label);
    if (!labels.empty()) ds.class_weights = compute_class_weights(labels);
    return ds;
}

} // namespace pheno
