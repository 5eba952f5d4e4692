#include <catch2/catch_amalgamated.hpp>
#include "strongid/strongid.hpp"
