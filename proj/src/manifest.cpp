#include "lcnn/manifest.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace lcnn {

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> fields;
    size_t start = 0;
    while (true) {
        size_t tab = line.find('\t', start);
        if (tab == std::string::npos) {
            fields.push_back(line.substr(start));
            break;
        }
        fields.push_back(line.substr(start, tab - start));
        start = tab + 1;
    }
    return fields;
}

[[noreturn]] void fail(const std::string& path, int lineno, const std::string& why) {
    throw std::runtime_error("malformed manifest line " + std::to_string(lineno) + " in " +
                             path + ": " + why);
}

}  // namespace

std::vector<ManifestEntry> read_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open manifest: " + path);

    std::vector<ManifestEntry> entries;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;

        auto fields = split_tabs(line);
        if (fields.size() != 2 && fields.size() != 12)
            fail(path, lineno,
                 "expected 2 or 12 tab-separated fields, got " + std::to_string(fields.size()));

        ManifestEntry e;
        e.path = fields[0];
        if (e.path.empty()) fail(path, lineno, "empty image path");
        try {
            size_t pos = 0;
            e.label = std::stoi(fields[1], &pos);
            if (pos != fields[1].size()) throw std::invalid_argument("");
        } catch (...) {
            fail(path, lineno, "label '" + fields[1] + "' is not an integer");
        }

        if (fields.size() == 12) {
            double v[10];
            for (int i = 0; i < 10; ++i) {
                try {
                    size_t pos = 0;
                    v[i] = std::stod(fields[2 + i], &pos);
                    if (pos != fields[2 + i].size()) throw std::invalid_argument("");
                } catch (...) {
                    fail(path, lineno, "landmark '" + fields[2 + i] + "' is not a number");
                }
            }
            Landmarks5 lm;
            lm.left_eye = {v[0], v[1]};
            lm.right_eye = {v[2], v[3]};
            lm.nose = {v[4], v[5]};
            lm.mouth_left = {v[6], v[7]};
            lm.mouth_right = {v[8], v[9]};
            e.landmarks = lm;
        }
        entries.push_back(std::move(e));
    }
    return entries;
}

void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write manifest: " + path);
    out.precision(6);
    out << std::fixed;
    for (const auto& e : entries) {
        out << e.path << '\t' << e.label;
        if (e.landmarks) {
            const auto& lm = *e.landmarks;
            for (const Point& p : {lm.left_eye, lm.right_eye, lm.nose, lm.mouth_left,
                                   lm.mouth_right})
                out << '\t' << p.x << '\t' << p.y;
        }
        out << '\n';
    }
    if (!out) throw std::runtime_error("failed writing manifest: " + path);
}

}  // namespace lcnn
