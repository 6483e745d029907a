#pragma once

#include <cstddef>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "gbx/archive.hpp"
#include "gbx/metrics.hpp"
#include "gbx/network.hpp"

namespace gbx {

struct FilterReport {
    std::size_t layer = 0;   // interp layer index
    std::size_t filter = 0;  // channel within the layer
    int target_category = -1;
    double p_f = 0.0;
    double instability = 0.0;  // assigned-category convention when assigned, else baseline
    bool instability_from_target = false;
    double baseline_instab = 0.0;
    PurityMass purity;
    double mean_target_act = 0.0;
    double mean_other_act = 0.0;
};

struct MetricsReport {
    double accuracy = 0.0;
    double rf_radius = 0.0;
    std::size_t top_m = 100;
    std::vector<FilterReport> filters;
    double mean_p_f = 0.0;
    double mean_instability = 0.0;
    double mean_baseline_instability = 0.0;
    double purity = 0.0;
    double mean_target_act = 0.0;
    double mean_other_act = 0.0;
    std::vector<std::string> warnings;
};

/// Runs the network over every scene and scores each interpretable filter.
/// Accuracy covers labeled scenes only (negatives carry no category).
inline MetricsReport evaluate(const Net& net, const std::vector<SyntheticScene>& scenes) {
    require(!scenes.empty(), "evaluate: no scenes");
    const std::size_t n_interp = net.num_interp();
    require(n_interp > 0, "evaluate: network has no interpretable layer");

    // maps[layer][filter][scene], selections likewise
    std::vector<std::vector<std::vector<Tensor>>> maps(n_interp);
    std::vector<std::vector<std::vector<std::size_t>>> sels(n_interp);
    for (std::size_t ii = 0; ii < n_interp; ++ii) {
        maps[ii].resize(net.states[ii].size());
        sels[ii].resize(net.states[ii].size());
    }
    std::size_t labeled = 0, correct = 0;
    for (const SyntheticScene& sc : scenes) {
        ForwardResult fwd = forward(net, sc.image, false);
        for (std::size_t ii = 0; ii < n_interp; ++ii)
            for (std::size_t f = 0; f < fwd.maps[ii].size(); ++f) {
                maps[ii][f].push_back(fwd.maps[ii][f]);
                sels[ii][f].push_back(fwd.sel[ii][f]);
            }
        if (sc.category >= 0) {
            ++labeled;
            if (static_cast<int>(activation_argmax(fwd.logits)) == sc.category) ++correct;
        }
    }

    MetricsReport rep;
    rep.accuracy = labeled == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(labeled);

    double sum_inst = 0.0, sum_base = 0.0, sum_tact = 0.0, sum_oact = 0.0;
    PurityMass total_mass;
    for (std::size_t ii = 0; ii < n_interp; ++ii) {
        const TemplateBank& bank = net.banks[ii];
        const double h = static_cast<double>(scenes[0].image.extent(0));
        rep.rf_radius = h / (2.0 * static_cast<double>(bank.n));
        for (std::size_t f = 0; f < maps[ii].size(); ++f) {
            FilterReport fr;
            fr.layer = ii;
            fr.filter = f;
            fr.target_category = net.states[ii][f].target_category;
            fr.p_f = part_interpretability(maps[ii][f], scenes, rep.rf_radius).p_f;
            fr.purity = purity_mass(maps[ii][f], sels[ii][f], bank);
            InstabilityResult base = baseline_instability(maps[ii][f], scenes, rep.top_m);
            fr.baseline_instab = base.mean;
            if (fr.target_category >= 0) {
                InstabilityResult tgt =
                    location_instability(maps[ii][f], scenes, fr.target_category, rep.top_m);
                for (int part : tgt.skipped_parts) {
                    std::ostringstream w;
                    w << "layer " << ii << " filter " << f << ": part " << part
                      << " has fewer than 2 usable images, excluded from instability";
                    rep.warnings.push_back(w.str());
                }
                if (tgt.valid) {
                    fr.instability = tgt.mean;
                    fr.instability_from_target = true;
                } else {
                    fr.instability = base.mean;
                    rep.warnings.push_back("layer " + std::to_string(ii) + " filter " +
                                           std::to_string(f) +
                                           ": no usable parts in target category, "
                                           "fell back to baseline instability");
                }
                ActivationStats st = activation_stats(maps[ii][f], scenes, fr.target_category);
                fr.mean_target_act = st.mean_target;
                fr.mean_other_act = st.mean_other;
            } else {
                fr.instability = base.mean;
                rep.warnings.push_back("layer " + std::to_string(ii) + " filter " +
                                       std::to_string(f) +
                                       ": target category unassigned, reporting baseline "
                                       "instability and zero activation stats");
            }
            rep.mean_p_f += fr.p_f;
            sum_inst += fr.instability;
            sum_base += fr.baseline_instab;
            sum_tact += fr.mean_target_act;
            sum_oact += fr.mean_other_act;
            total_mass.inside += fr.purity.inside;
            total_mass.total += fr.purity.total;
            rep.filters.push_back(fr);
        }
    }
    const double nf = static_cast<double>(rep.filters.size());
    rep.mean_p_f /= nf;
    rep.mean_instability = sum_inst / nf;
    rep.mean_baseline_instability = sum_base / nf;
    rep.purity = total_mass.value();
    rep.mean_target_act = sum_tact / nf;
    rep.mean_other_act = sum_oact / nf;
    return rep;
}

inline std::string report_tsv(const MetricsReport& rep) {
    std::ostringstream os;
    os << "# interpretable filter metrics\n";
    os << "# conventions: instability uses population variance over the top " << rep.top_m
       << " images ranked by peak activation;\n";
    os << "#   receptive field radius " << format_double(rep.rf_radius)
       << " px; purity aggregates activation mass before dividing\n";
    os << "filter\ttarget_category\tp_f\tinstability\tpurity\tmean_target_act\tmean_other_act\n";
    for (std::size_t i = 0; i < rep.filters.size(); ++i) {
        const FilterReport& fr = rep.filters[i];
        os << i << '\t' << fr.target_category << '\t' << format_double(fr.p_f) << '\t'
           << format_double(fr.instability) << '\t' << format_double(fr.purity.value()) << '\t'
           << format_double(fr.mean_target_act) << '\t' << format_double(fr.mean_other_act) << '\n';
    }
    os << "# summary mean_p_f " << format_double(rep.mean_p_f) << '\n';
    os << "# summary mean_instability " << format_double(rep.mean_instability) << '\n';
    os << "# summary baseline_instability " << format_double(rep.mean_baseline_instability) << '\n';
    os << "# summary purity " << format_double(rep.purity) << '\n';
    os << "# summary mean_target_act " << format_double(rep.mean_target_act) << '\n';
    os << "# summary mean_other_act " << format_double(rep.mean_other_act) << '\n';
    os << "# summary accuracy " << format_double(rep.accuracy) << '\n';
    for (const std::string& w : rep.warnings) os << "# warning " << w << '\n';
    return os.str();
}

inline nlohmann::ordered_json report_json(const MetricsReport& rep) {
    nlohmann::ordered_json j;
    j["conventions"] = {{"variance", "population"},
                        {"inference_score", "peak activation"},
                        {"rf_radius", rep.rf_radius},
                        {"top_m", rep.top_m}};
    j["filters"] = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < rep.filters.size(); ++i) {
        const FilterReport& fr = rep.filters[i];
        j["filters"].push_back({{"filter", i},
                                {"layer", fr.layer},
                                {"channel", fr.filter},
                                {"target_category", fr.target_category},
                                {"p_f", fr.p_f},
                                {"instability", fr.instability},
                                {"instability_from_target", fr.instability_from_target},
                                {"baseline_instability", fr.baseline_instab},
                                {"purity", fr.purity.value()},
                                {"mean_target_act", fr.mean_target_act},
                                {"mean_other_act", fr.mean_other_act}});
    }
    j["summary"] = {{"mean_p_f", rep.mean_p_f},
                    {"mean_instability", rep.mean_instability},
                    {"baseline_instability", rep.mean_baseline_instability},
                    {"purity", rep.purity},
                    {"mean_target_act", rep.mean_target_act},
                    {"mean_other_act", rep.mean_other_act},
                    {"accuracy", rep.accuracy}};
    j["warnings"] = rep.warnings;
    return j;
}

inline void write_report(const std::string& dir, const MetricsReport& rep) {
    {
        std::ofstream os(dir + "/report.tsv", std::ios::binary);
        require(os.good(), "cannot write " + dir + "/report.tsv");
        os << report_tsv(rep);
    }
    std::ofstream os(dir + "/report.json", std::ios::binary);
    require(os.good(), "cannot write " + dir + "/report.json");
    os << report_json(rep).dump(2) << '\n';
}

}  // namespace gbx
