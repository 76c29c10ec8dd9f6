#!/usr/bin/env python

"""Print the path of the local fcg-robust installation."""

if __name__=="__main__":  # pragma: no cover
    import fcg_robust
    import os.path
    print(os.path.dirname(fcg_robust.__file__))
