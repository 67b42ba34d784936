#include "cforge/ply_io.hpp"

#include "cforge/errors.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace cforge {

namespace {

constexpr const char* kProperties[] = {"x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity",
                                       "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"};

std::size_t type_size(const std::string& type) {
    if (type == "float" || type == "float32" || type == "int" || type == "int32" || type == "uint" ||
        type == "uint32")
        return 4;
    if (type == "double" || type == "float64") return 8;
    if (type == "uchar" || type == "uint8" || type == "char" || type == "int8") return 1;
    if (type == "short" || type == "ushort" || type == "int16" || type == "uint16") return 2;
    throw FormatError("unsupported PLY property type " + type);
}

}  // namespace

void write_ply(std::ostream& out, const GaussianCloud& cloud) {
    cloud.validate();
    out << "ply\nformat binary_little_endian 1.0\n";
    out << "element vertex " << cloud.size() << "\n";
    for (const char* name : kProperties) out << "property float " << name << "\n";
    out << "end_header\n";
    std::vector<float> row(std::size(kProperties));
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        std::size_t k = 0;
        for (float v : cloud.positions[i]) row[k++] = v;
        for (float v : cloud.color_dc[i]) row[k++] = v;
        row[k++] = cloud.opacity_logits[i];
        for (float v : cloud.log_scales[i]) row[k++] = v;
        for (float v : cloud.rotations[i]) row[k++] = v;
        out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size() * sizeof(float)));
    }
    if (!out) throw FormatError("failed writing PLY stream");
}

void write_ply(const std::filesystem::path& path, const GaussianCloud& cloud) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write " + path.string());
    write_ply(out, cloud);
}

GaussianCloud read_ply(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line != "ply") throw FormatError("missing PLY magic");
    std::size_t count = 0;
    bool in_vertex = false;
    bool seen_vertex = false;
    std::size_t stride = 0;
    std::map<std::string, std::size_t> offsets;
    std::map<std::string, std::string> types;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::istringstream ls(line);
        std::string word;
        ls >> word;
        if (word == "format") {
            std::string fmt;
            ls >> fmt;
            if (fmt != "binary_little_endian") throw FormatError("only binary_little_endian PLY is supported");
        } else if (word == "element") {
            std::string name;
            ls >> name;
            if (seen_vertex) throw FormatError("elements after 'vertex' are not supported");
            in_vertex = name == "vertex";
            if (!in_vertex) throw FormatError("unexpected PLY element " + name);
            ls >> count;
            seen_vertex = true;
        } else if (word == "property") {
            std::string type, name;
            ls >> type;
            if (type == "list") throw FormatError("list properties are not supported");
            ls >> name;
            if (!in_vertex) throw FormatError("property outside the vertex element");
            offsets[name] = stride;
            types[name] = type;
            stride += type_size(type);
        } else if (word == "end_header") {
            break;
        }
    }
    if (!seen_vertex) throw FormatError("PLY has no vertex element");
    std::size_t prop_offset[std::size(kProperties)];
    for (std::size_t k = 0; k < std::size(kProperties); ++k) {
        auto it = offsets.find(kProperties[k]);
        if (it == offsets.end()) throw FormatError(std::string("PLY lacks property ") + kProperties[k]);
        if (types[kProperties[k]] != "float" && types[kProperties[k]] != "float32") {
            throw FormatError(std::string("PLY property ") + kProperties[k] + " must be float32");
        }
        prop_offset[k] = it->second;
    }

    GaussianCloud cloud;
    cloud.reserve(count);
    std::vector<char> row(stride);
    auto get = [&](std::size_t k) {
        float v;
        std::memcpy(&v, row.data() + prop_offset[k], sizeof(float));
        return v;
    };
    for (std::size_t i = 0; i < count; ++i) {
        if (!in.read(row.data(), static_cast<std::streamsize>(stride))) throw FormatError("truncated PLY body");
        cloud.positions.push_back({get(0), get(1), get(2)});
        cloud.color_dc.push_back({get(3), get(4), get(5)});
        cloud.opacity_logits.push_back(get(6));
        cloud.log_scales.push_back({get(7), get(8), get(9)});
        cloud.rotations.push_back({get(10), get(11), get(12), get(13)});
    }
    return cloud;
}

GaussianCloud read_ply(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    return read_ply(in);
}

}  // namespace cforge
