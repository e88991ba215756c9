#pragma once

#include "cpmt/data.hpp"
#include "helpers.hpp"

namespace testutil {

// Two persons with audio [T x 3] and video [T x 4] streams.
inline std::vector<cpmt::PersonStream> random_persons(cpmt::Rng& rng, std::size_t T) {
    std::vector<cpmt::PersonStream> persons(2);
    persons[0].person_id = "child";
    persons[0].role = cpmt::Role::self;
    persons[1].person_id = "parent";
    persons[1].role = cpmt::Role::other;
    for (auto& p : persons) {
        p.group_id = "g0";
        p.streams = {{cpmt::Modality::audio, randn({T, 3}, rng), 1.0}, {cpmt::Modality::video, randn({T, 4}, rng), 1.0}};
    }
    return persons;
}

}  // namespace testutil
