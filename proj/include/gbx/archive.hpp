#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "gbx/pnm.hpp"
#include "gbx/scene_gen.hpp"

namespace gbx {

/// Scene archives are a directory of P5 images and P4 part masks plus a text
/// index:
///   GBXA1
///   scenes <N>
///   categories <C>
///   size <H> <W>
///   scene <idx> <category> <pgm> <nparts> <r0> <c0> <r1> <c1>
///   part <part_id> <row> <col> <pbm>        (nparts lines)
/// Landmark coordinates are printed with %.17g so reload is value-exact.

inline std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline void write_archive(const std::string& dir, const std::vector<SyntheticScene>& scenes,
                          std::size_t num_categories) {
    require(!scenes.empty(), "write_archive: no scenes");
    std::filesystem::create_directories(dir);
    const std::string index_path = dir + "/index.txt";
    std::ofstream idx(index_path);
    if (!idx) throw std::runtime_error("cannot open for writing: " + index_path);
    const std::size_t H = scenes[0].image.extent(0), W = scenes[0].image.extent(1);
    idx << "GBXA1\n";
    idx << "scenes " << scenes.size() << "\n";
    idx << "categories " << num_categories << "\n";
    idx << "size " << H << " " << W << "\n";
    char name[64];
    for (std::size_t s = 0; s < scenes.size(); ++s) {
        const SyntheticScene& sc = scenes[s];
        require(sc.image.extent(0) == H && sc.image.extent(1) == W, "write_archive: mixed image sizes");
        std::snprintf(name, sizeof(name), "scene_%05zu.pgm", s);
        write_pgm(dir + "/" + name, to_gray(sc.image));
        idx << "scene " << s << " " << sc.category << " " << name << " " << sc.landmarks.size()
            << " " << sc.object_box[0] << " " << sc.object_box[1] << " " << sc.object_box[2]
            << " " << sc.object_box[3] << "\n";
        for (std::size_t p = 0; p < sc.landmarks.size(); ++p) {
            char mname[64];
            std::snprintf(mname, sizeof(mname), "scene_%05zu_p%02zu.pbm", s, p);
            write_pbm(dir + "/" + mname, sc.part_masks[p]);
            idx << "part " << sc.landmarks[p].part_id << " " << format_double(sc.landmarks[p].row)
                << " " << format_double(sc.landmarks[p].col) << " " << mname << "\n";
        }
    }
    if (!idx) throw std::runtime_error("write failed: " + index_path);
}

struct Archive {
    std::size_t num_categories = 0;
    std::size_t image_h = 0, image_w = 0;
    std::vector<SyntheticScene> scenes;
};

inline Archive load_archive(const std::string& dir) {
    const std::string index_path = dir + "/index.txt";
    std::ifstream idx(index_path);
    if (!idx) throw std::runtime_error("cannot open archive index: " + index_path);
    std::string magic;
    idx >> magic;
    if (magic != "GBXA1") throw std::runtime_error("not a scene archive: " + index_path);
    Archive ar;
    std::size_t count = 0;
    std::string key;
    idx >> key >> count;
    if (key != "scenes") throw std::runtime_error("malformed archive index: " + index_path);
    idx >> key >> ar.num_categories;
    if (key != "categories") throw std::runtime_error("malformed archive index: " + index_path);
    idx >> key >> ar.image_h >> ar.image_w;
    if (key != "size") throw std::runtime_error("malformed archive index: " + index_path);
    ar.scenes.reserve(count);
    for (std::size_t s = 0; s < count; ++s) {
        std::size_t sidx = 0, nparts = 0;
        std::string pgm;
        SyntheticScene sc;
        idx >> key >> sidx >> sc.category >> pgm >> nparts >> sc.object_box[0] >> sc.object_box[1]
            >> sc.object_box[2] >> sc.object_box[3];
        if (!idx || key != "scene" || sidx != s)
            throw std::runtime_error("malformed scene entry " + std::to_string(s) + " in " + index_path);
        sc.image = from_gray(read_pgm(dir + "/" + pgm));
        for (std::size_t p = 0; p < nparts; ++p) {
            Landmark lm;
            std::string pbm;
            idx >> key >> lm.part_id >> lm.row >> lm.col >> pbm;
            if (!idx || key != "part")
                throw std::runtime_error("malformed part entry in scene " + std::to_string(s));
            sc.landmarks.push_back(lm);
            sc.part_masks.push_back(read_pbm(dir + "/" + pbm));
        }
        ar.scenes.push_back(std::move(sc));
    }
    return ar;
}

}  // namespace gbx
