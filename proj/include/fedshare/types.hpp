#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "fedshare/distribution.hpp"
#include "fedshare/errors.hpp"

namespace fedshare {

// Per-client view used by the clustering and heterogeneity machinery:
// sample count plus label histogram.
struct ClientStat {
    std::int64_t n = 0;
    LabelDistribution dist;
};

// Disjoint clusters over clients 0..K-1. Every client is a head or a member
// of exactly one head; heads with no members are singletons.
struct ClusterAssignment {
    std::vector<int> heads;                    // sorted ascending
    std::map<int, std::vector<int>> members;   // head -> sorted member ids

    void validate(int num_clients) const {
        std::set<int> seen;
        std::set<int> head_set(heads.begin(), heads.end());
        if (head_set.size() != heads.size()) throw validation_error("assignment: duplicate head");
        for (int h : heads) {
            if (h < 0 || h >= num_clients) throw validation_error("assignment: head id out of range");
            seen.insert(h);
        }
        for (const auto& [h, mem] : members) {
            if (!head_set.count(h)) throw validation_error("assignment: member list for unknown head " + std::to_string(h));
            for (int c : mem) {
                if (c < 0 || c >= num_clients) throw validation_error("assignment: member id out of range");
                if (head_set.count(c)) throw validation_error("assignment: head " + std::to_string(c) + " is also a member");
                if (!seen.insert(c).second) throw validation_error("assignment: client " + std::to_string(c) + " assigned twice");
            }
        }
        if (static_cast<int>(seen.size()) != num_clients) {
            throw validation_error("assignment: not all clients covered");
        }
    }

    const std::vector<int>& members_of(int head) const {
        static const std::vector<int> kEmpty;
        auto it = members.find(head);
        return it == members.end() ? kEmpty : it->second;
    }

    bool is_head(int client) const {
        return std::binary_search(heads.begin(), heads.end(), client);
    }

    // Head whose cluster contains the client, or -1 for heads/unassigned.
    int head_of(int client) const {
        for (const auto& [h, mem] : members) {
            if (std::binary_search(mem.begin(), mem.end(), client)) return h;
        }
        return -1;
    }
};

// Decision variables of the sharing problem: per-head shared sample count
// and per-client CPU frequency.
struct SharingPlan {
    std::map<int, std::int64_t> volumes;     // head -> samples multicast to members
    std::map<int, double> frequencies;       // client -> Hz

    std::int64_t volume_of(int head) const {
        auto it = volumes.find(head);
        return it == volumes.end() ? 0 : it->second;
    }
};

} // namespace fedshare
