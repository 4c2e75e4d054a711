#include "trajlab/report.hpp"

#include "trajlab/errors.hpp"
#include "trajlab/io.hpp"

#include <algorithm>
#include <cmath>

namespace trajlab {

namespace {

const char* kGroupColors[4] = {"#4daf4a", "#377eb8", "#e41a1c", "#999999"};
const char* kBiasColors[4] = {"#1b9e77", "#66c2a5", "#d95f02", "#fc8d62"};

std::string num(double v) {
    return format_fixed(v, 2);
}

struct Svg {
    std::string body;
    double width;
    double height;

    Svg(double w, double h) : width(w), height(h) {
        body = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(w) + "\" height=\"" +
               num(h) + "\" viewBox=\"0 0 " + num(w) + " " + num(h) + "\">\n";
        body += "<rect x=\"0\" y=\"0\" width=\"" + num(w) + "\" height=\"" + num(h) +
                "\" fill=\"#ffffff\"/>\n";
    }
    void rect(double x, double y, double w, double h, const std::string& fill,
              const std::string& stroke = "") {
        body += "<rect x=\"" + num(x) + "\" y=\"" + num(y) + "\" width=\"" + num(w) +
                "\" height=\"" + num(h) + "\" fill=\"" + fill + "\"";
        if (!stroke.empty()) {
            body += " stroke=\"" + stroke + "\" stroke-width=\"0.5\"";
        }
        body += "/>\n";
    }
    void line(double x1, double y1, double x2, double y2, const std::string& stroke,
              double width_px = 1.0) {
        body += "<line x1=\"" + num(x1) + "\" y1=\"" + num(y1) + "\" x2=\"" + num(x2) + "\" y2=\"" +
                num(y2) + "\" stroke=\"" + stroke + "\" stroke-width=\"" + num(width_px) + "\"/>\n";
    }
    void polyline(const std::vector<std::pair<double, double>>& pts, const std::string& stroke,
                  double width_px = 1.5) {
        body += "<polyline fill=\"none\" stroke=\"" + stroke + "\" stroke-width=\"" +
                num(width_px) + "\" points=\"";
        for (const auto& [x, y] : pts) {
            body += num(x) + "," + num(y) + " ";
        }
        body += "\"/>\n";
    }
    void polygon(const std::vector<std::pair<double, double>>& pts, const std::string& fill) {
        body += "<polygon fill=\"" + fill + "\" fill-opacity=\"0.25\" stroke=\"none\" points=\"";
        for (const auto& [x, y] : pts) {
            body += num(x) + "," + num(y) + " ";
        }
        body += "\"/>\n";
    }
    void text(double x, double y, const std::string& s, double size = 10.0,
              const std::string& anchor = "start") {
        std::string escaped;
        for (char c : s) {
            switch (c) {
                case '&': escaped += "&amp;"; break;
                case '<': escaped += "&lt;"; break;
                case '>': escaped += "&gt;"; break;
                default: escaped += c;
            }
        }
        body += "<text x=\"" + num(x) + "\" y=\"" + num(y) + "\" font-family=\"sans-serif\" font-size=\"" +
                num(size) + "\" text-anchor=\"" + anchor + "\">" + escaped + "</text>\n";
    }
    void comment(const std::string& s) { body += "<!-- " + s + " -->\n"; }
    std::string finish() { return body + "</svg>\n"; }
};

} // namespace

std::string render_acquisition_bars(std::vector<AcquisitionBar> bars) {
    if (bars.empty()) {
        throw ValueError("render_acquisition_bars: no probes to plot");
    }
    std::stable_sort(bars.begin(), bars.end(), [](const AcquisitionBar& a, const AcquisitionBar& b) {
        if (a.mean_step != b.mean_step) {
            return a.mean_step < b.mean_step;
        }
        return a.probe < b.probe;
    });
    double max_step = 1.0;
    for (const auto& b : bars) {
        max_step = std::max(max_step, b.mean_step);
        for (double s : b.seed_steps) {
            max_step = std::max(max_step, s);
        }
    }

    const double row_h = 22.0;
    const double left = 150.0;
    const double plot_w = 420.0;
    const double top = 30.0;
    Svg svg(left + plot_w + 40.0, top + row_h * static_cast<double>(bars.size()) + 30.0);
    svg.text(left, 18.0, "mean acquisition step per probe", 11.0);
    auto xpos = [&](double step) { return left + plot_w * (step / max_step); };

    for (size_t i = 0; i < bars.size(); ++i) {
        const auto& b = bars[i];
        const double y = top + row_h * static_cast<double>(i);
        const int g = std::clamp(b.group, 0, 3);
        svg.rect(left, y + 4.0, xpos(b.mean_step) - left, row_h - 8.0, kGroupColors[g]);
        for (double s : b.seed_steps) {
            svg.line(xpos(s), y + 2.0, xpos(s), y + row_h - 2.0, "#333333", 1.0);
        }
        svg.text(left - 6.0, y + row_h / 2.0 + 3.5, b.probe, 10.0, "end");
    }
    const double axis_y = top + row_h * static_cast<double>(bars.size()) + 4.0;
    svg.line(left, axis_y, left + plot_w, axis_y, "#000000", 1.0);
    svg.text(left, axis_y + 14.0, "0", 9.0);
    svg.text(left + plot_w, axis_y + 14.0, format_fixed(max_step, 0), 9.0, "end");
    return svg.finish();
}

std::string render_group_curves(const std::vector<int64_t>& steps,
                                const std::vector<GroupCurve>& groups,
                                std::vector<std::string>* warnings) {
    if (groups.empty()) {
        throw ValueError("render_group_curves: no groups");
    }
    const double left = 50.0, top = 24.0, plot_w = 460.0, plot_h = 260.0;
    Svg svg(left + plot_w + 140.0, top + plot_h + 40.0);
    const double max_step = static_cast<double>(steps.empty() ? 1 : steps.back());
    auto xpos = [&](double step) { return left + (max_step > 0 ? plot_w * step / max_step : 0.0); };
    auto ypos = [&](double acc) { return top + plot_h * (1.0 - acc); };

    // frame and chance line
    svg.rect(left, top, plot_w, plot_h, "none", "#000000");
    svg.line(left, ypos(0.5), left + plot_w, ypos(0.5), "#bbbbbb", 0.8);
    for (double acc : {0.0, 0.5, 1.0}) {
        svg.text(left - 6.0, ypos(acc) + 3.0, format_fixed(acc, 1), 9.0, "end");
    }
    svg.text(left + plot_w / 2.0, top + plot_h + 26.0, "training step", 10.0, "middle");

    for (size_t gi = 0; gi < groups.size(); ++gi) {
        const auto& g = groups[gi];
        if (g.member_curves.empty()) {
            continue;
        }
        const size_t n = g.member_curves.size();
        const size_t len = g.member_curves.front().size();
        if (len != steps.size()) {
            throw ValueError("render_group_curves: curve length disagrees with steps");
        }
        if (n == 1 && warnings) {
            warnings->push_back("group '" + g.label + "' has a single member; SEM band is zero");
        }
        std::vector<double> mean(len, 0.0), sem(len, 0.0);
        for (const auto& c : g.member_curves) {
            for (size_t t = 0; t < len; ++t) {
                mean[t] += c[t];
            }
        }
        for (auto& v : mean) {
            v /= static_cast<double>(n);
        }
        if (n > 1) {
            for (size_t t = 0; t < len; ++t) {
                double ss = 0.0;
                for (const auto& c : g.member_curves) {
                    ss += (c[t] - mean[t]) * (c[t] - mean[t]);
                }
                sem[t] = std::sqrt(ss / static_cast<double>(n - 1)) /
                         std::sqrt(static_cast<double>(n));
            }
        }
        const std::string color = kGroupColors[std::min<size_t>(gi, 3)];
        std::vector<std::pair<double, double>> band;
        for (size_t t = 0; t < len; ++t) {
            band.emplace_back(xpos(static_cast<double>(steps[t])), ypos(mean[t] + sem[t]));
        }
        for (size_t t = len; t-- > 0;) {
            band.emplace_back(xpos(static_cast<double>(steps[t])), ypos(mean[t] - sem[t]));
        }
        svg.polygon(band, color);
        std::vector<std::pair<double, double>> line;
        for (size_t t = 0; t < len; ++t) {
            line.emplace_back(xpos(static_cast<double>(steps[t])), ypos(mean[t]));
        }
        svg.polyline(line, color);
        svg.text(left + plot_w + 10.0, top + 14.0 * static_cast<double>(gi + 1),
                 g.label + " (n=" + std::to_string(n) + ")", 10.0);
        svg.rect(left + plot_w + 112.0, top + 14.0 * static_cast<double>(gi + 1) - 8.0, 10.0, 8.0,
                 color);
    }
    return svg.finish();
}

std::string render_stage_matrix(const LearnedGrid& grid) {
    const size_t n_agents = grid.agents.size();
    const size_t n_stages = grid.stage_labels.size();
    const double cell = 16.0;
    const double left = 170.0, top = 70.0;
    Svg svg(left + cell * static_cast<double>(n_stages) + 30.0,
            top + cell * static_cast<double>(n_agents) + 20.0);
    for (size_t s = 0; s < n_stages; ++s) {
        // column headers, rotated not worth it: short index + label below each other
        svg.text(left + cell * (static_cast<double>(s) + 0.5), 20.0, std::to_string(s + 1), 10.0,
                 "middle");
        svg.text(left + cell * (static_cast<double>(s) + 0.5), 34.0 + 11.0 * static_cast<double>(s % 3),
                 grid.stage_labels[s], 7.0, "middle");
    }
    for (size_t a = 0; a < n_agents; ++a) {
        const double y = top + cell * static_cast<double>(a);
        svg.text(left - 6.0, y + cell / 2.0 + 3.0, grid.agents[a], 8.0, "end");
        const bool is_child = grid.agents[a].rfind("children", 0) == 0;
        for (size_t s = 0; s < n_stages; ++s) {
            const std::string fill =
                grid.learned(a, s) ? (is_child ? "#7b3294" : "#008837") : "#ffffff";
            svg.rect(left + cell * static_cast<double>(s), y, cell - 1.0, cell - 1.0, fill,
                     "#888888");
        }
    }
    return svg.finish();
}

std::string render_bias_curves(const std::vector<int64_t>& steps,
                               const std::vector<BiasPanel>& panels) {
    static const char* kOrder[4] = {"congruent_singular", "congruent_plural",
                                    "incongruent_singular", "incongruent_plural"};
    const double left = 50.0, plot_w = 400.0, plot_h = 170.0, panel_gap = 40.0;
    const double total_h = 30.0 + static_cast<double>(panels.size()) * (plot_h + panel_gap);
    Svg svg(left + plot_w + 190.0, total_h);
    const double max_step = static_cast<double>(steps.empty() ? 1 : steps.back());

    double top = 24.0;
    for (const auto& panel : panels) {
        auto xpos = [&](double step) {
            return left + (max_step > 0 ? plot_w * step / max_step : 0.0);
        };
        auto ypos = [&](double acc) { return top + plot_h * (1.0 - acc); };
        svg.rect(left, top, plot_w, plot_h, "none", "#000000");
        svg.line(left, ypos(0.5), left + plot_w, ypos(0.5), "#bbbbbb", 0.8);
        svg.text(left, top - 6.0, panel.probe, 11.0);
        int ci = 0;
        for (const char* stratum : kOrder) {
            auto it = panel.curves.curves.find(stratum);
            if (it == panel.curves.curves.end()) {
                svg.comment(std::string("missing stratum ") + stratum);
                ++ci;
                continue;
            }
            std::vector<std::pair<double, double>> line;
            for (size_t t = 0; t < it->second.size(); ++t) {
                line.emplace_back(xpos(static_cast<double>(steps[t])), ypos(it->second[t]));
            }
            svg.polyline(line, kBiasColors[ci]);
            svg.text(left + plot_w + 10.0, top + 14.0 * static_cast<double>(ci + 1), stratum, 9.0);
            svg.rect(left + plot_w + 130.0, top + 14.0 * static_cast<double>(ci + 1) - 7.0, 10.0,
                     7.0, kBiasColors[ci]);
            ++ci;
        }
        top += plot_h + panel_gap;
    }
    return svg.finish();
}

void ReportBundle::write(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    for (const auto& doc : tables) {
        write_text_file(dir / doc.name, doc.body);
    }
    for (const auto& doc : figures) {
        write_text_file(dir / doc.name, doc.body);
    }
}

} // namespace trajlab
