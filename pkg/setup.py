from setuptools import setup, find_packages

setup(
    name="fcg-robust",
    version="0.1.0",
    packages=find_packages(exclude=["tests"]),

    # Metadata for PyPi
    description="Robust malware classification over function call graphs: "
                "semantic node features, feature collation, GNN training, "
                "test-time adaptation and distribution-shifted benchmarks",
    license="GPLv2",
    keywords="malware function-call-graph gnn distribution-shift "
             "test-time-adaptation",

    # Requirements
    install_requires=["numpy", "six", "cairocffi", "tqdm"],

    # Scripts
    entry_points={
        "console_scripts": [
            "fcg-robust = fcg_robust.cli:main",
        ],
    },
)
