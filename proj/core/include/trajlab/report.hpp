#pragma once

#include "trajlab/childcmp.hpp"
#include "trajlab/trajectory.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace trajlab {

// Self-contained SVG renderers. Output is a pure function of the input data
// (fixed-precision coordinates, no timestamps or generated ids), so golden
// tests can compare bytes.

struct AcquisitionBar {
    std::string probe;
    double mean_step = 0.0;
    std::vector<double> seed_steps; // per-seed spread marks
    int group = 0;                  // 0 early, 1 middle, 2 late
};

// Horizontal bars of mean acquisition step, ascending, colored by group.
std::string render_acquisition_bars(std::vector<AcquisitionBar> bars);

struct GroupCurve {
    std::string label;
    std::vector<std::vector<double>> member_curves; // one per probe
};

// Mean curve per group with a +-SEM band (sample std over members / sqrt n;
// a single member renders a zero-width band and a warning). Warnings are
// appended to *warnings when given.
std::string render_group_curves(const std::vector<int64_t>& steps,
                                const std::vector<GroupCurve>& groups,
                                std::vector<std::string>* warnings = nullptr);

// Agents x stages matrix; a cell is filled iff learned.
std::string render_stage_matrix(const LearnedGrid& grid);

// The four congruency x number trajectories per probe, one panel per probe.
struct BiasPanel {
    std::string probe;
    BiasCurves curves;
};
std::string render_bias_curves(const std::vector<int64_t>& steps,
                               const std::vector<BiasPanel>& panels);

struct NamedDocument {
    std::string name; // file name inside the report directory
    std::string body;
};

// Figures plus the tables they are drawn from, with run metadata.
struct ReportBundle {
    std::string config_hash;
    std::vector<int64_t> seeds;
    std::vector<int64_t> steps;
    std::vector<NamedDocument> tables;  // CSV
    std::vector<NamedDocument> figures; // SVG

    // Writes every document under dir with stable names.
    void write(const std::filesystem::path& dir) const;
};

} // namespace trajlab
