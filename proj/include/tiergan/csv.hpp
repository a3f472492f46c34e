#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "tiergan/error.hpp"
#include "tiergan/gan.hpp"

namespace tiergan {

inline std::string loss_csv_line(const LossRecord& r) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "%zu,%zu,%.6f,%.6f", r.epoch, r.step, r.d_loss, r.g_loss);
    return buf;
}

// Header `epoch,step,d_loss,g_loss`, one 6-decimal row per step. In append
// mode the header is only written when the file does not exist yet, so a
// resumed run extends the original log.
inline void write_loss_csv(const std::vector<LossRecord>& records, const std::string& path,
                           bool append = false) {
    const bool fresh = !append || !std::filesystem::exists(path);
    std::ofstream out(path, append ? (std::ios::out | std::ios::app) : (std::ios::out | std::ios::trunc));
    if (!out) throw IoError(path + ": cannot open for writing");
    if (fresh) out << "epoch,step,d_loss,g_loss\n";
    for (const LossRecord& r : records) out << loss_csv_line(r) << "\n";
    if (!out) throw IoError(path + ": write failed");
}

} // namespace tiergan
