"""Tests for dataset loading and splitting."""

import gzip
import struct
from pathlib import Path

import numpy as np
import pytest

from tqnn.data import (
    Dataset,
    DataSource,
    allocate,
    builtin_schema,
    load_csv,
    load_mnist_subset,
    load_schema,
    load_source,
    read_idx_images,
    read_idx_labels,
    split_standardize,
)
from tqnn.errors import ConfigError, FormatError, ParseError, StratificationError

IRIS_HEADER = "sepal_length,sepal_width,petal_length,petal_width,species"

HEART_HEADER = (
    "Age,Sex,ChestPainType,RestingBP,Cholesterol,FastingBS,RestingECG,"
    "MaxHR,ExerciseAngina,Oldpeak,ST_Slope,HeartDisease"
)
HEART_ROWS = [
    "40,M,ATA,140,289,0,Normal,172,N,0,Up,0",
    "49,F,NAP,160,180,0,Normal,156,N,1,Flat,1",
    "37,M,ATA,130,283,0,ST,98,N,0,Up,0",
    "48,F,ASY,138,214,0,Normal,108,Y,1.5,Flat,1",
    "54,M,NAP,150,195,0,Normal,122,N,0,Up,0",
    "39,M,NAP,120,339,0,Normal,170,N,0,Up,0",
    "45,F,ATA,130,237,0,Normal,170,N,0,Up,0",
    "54,M,ATA,110,208,0,Normal,142,N,0,Up,0",
    "37,M,ASY,140,207,0,Normal,130,Y,1.5,Flat,1",
    "48,F,ATA,120,284,0,Normal,120,N,0,Up,0",
    "65,M,ASY,150,236,1,LVH,105,Y,0,Down,1",
    "60,M,TA,140,185,0,LVH,155,N,3,Flat,1",
]


def write_idx_images(path: Path, images: np.ndarray, compress: bool = False) -> None:
    count, rows, cols = images.shape
    data = struct.pack(">IIII", 0x00000803, count, rows, cols) + images.astype(np.uint8).tobytes()
    path.write_bytes(gzip.compress(data) if compress else data)


def write_idx_labels(path: Path, labels: np.ndarray, compress: bool = False) -> None:
    data = struct.pack(">II", 0x00000801, len(labels)) + labels.astype(np.uint8).tobytes()
    path.write_bytes(gzip.compress(data) if compress else data)


@pytest.fixture
def mnist_files(temp_dir):
    """Twelve 8x8 images; ten of them are digits 1, 2 or 3."""
    gen = np.random.default_rng(0)
    images = gen.integers(0, 256, size=(12, 8, 8))
    labels = np.array([1, 2, 3, 1, 2, 3, 1, 2, 3, 0, 4, 1])
    image_path = Path(temp_dir) / "images.idx"
    label_path = Path(temp_dir) / "labels.idx"
    write_idx_images(image_path, images)
    write_idx_labels(label_path, labels)
    return image_path, label_path, images, labels


def write_text(temp_dir, name: str, lines: list[str]) -> Path:
    path = Path(temp_dir) / name
    path.write_text("\n".join(lines) + "\n")
    return path


class TestIris:
    """Tests for the embedded iris table."""

    def test_shape_and_counts(self, iris_raw):
        """Test 150 rows, 4 features and 50 rows per class."""
        assert iris_raw.features.shape == (150, 4)
        assert iris_raw.n_classes == 3
        assert iris_raw.class_counts() == [50, 50, 50]
        assert iris_raw.class_names == ["setosa", "versicolor", "virginica"]
        assert iris_raw.feature_names[0] == "sepal_length"

    def test_first_row(self, iris_raw):
        """Test the first record."""
        np.testing.assert_array_equal(iris_raw.features[0], [5.1, 3.5, 1.4, 0.2])
        assert iris_raw.labels[0] == 0


class TestAllocate:
    """Tests for the largest-remainder allocation."""

    def test_exact(self):
        """Test equal classes."""
        assert allocate([50, 50, 50], 30) == [10, 10, 10]

    def test_remainder_goes_to_largest_fraction(self):
        """Test quotas 1.875 and 1.125."""
        assert allocate([5, 3], 3) == [2, 1]

    def test_ties_go_to_lower_index(self):
        """Test three equal remainders with two seats."""
        assert allocate([1, 1, 1], 2) == [1, 1, 0]

    def test_total_preserved(self):
        """Test that allocations always sum to the total."""
        for total in range(0, 31):
            assert sum(allocate([7, 11, 13], total)) == total


class TestSplit:
    """Tests for split_standardize."""

    def test_iris_split(self, iris):
        """Test 120/30 with 40/10 rows per class."""
        assert len(iris.train_idx) == 120
        assert len(iris.test_idx) == 30
        assert iris.class_counts(iris.train_idx) == [40, 40, 40]
        assert iris.class_counts(iris.test_idx) == [10, 10, 10]
        assert not set(iris.train_idx) & set(iris.test_idx)
        assert iris.is_split

    def test_standardized_on_train(self, iris):
        """Test zero mean and unit deviation on the training rows."""
        np.testing.assert_allclose(iris.train_x.mean(axis=0), 0.0, atol=1e-12)
        np.testing.assert_allclose(iris.train_x.std(axis=0), 1.0, atol=1e-12)
        assert iris.feature_means is not None and iris.feature_stds is not None

    def test_raw_features_untouched(self, iris_raw, iris):
        """Test that the input dataset is not modified."""
        assert iris_raw.features[0, 0] == 5.1
        assert iris_raw.train_idx.size == 0
        assert iris.features[0, 0] != 5.1

    def test_seeded(self, iris_raw):
        """Test that the seed picks the test rows."""
        a = split_standardize(iris_raw, seed=3)
        b = split_standardize(iris_raw, seed=3)
        c = split_standardize(iris_raw, seed=4)
        np.testing.assert_array_equal(a.test_idx, b.test_idx)
        assert not np.array_equal(a.test_idx, c.test_idx)

    def test_validation_split(self, iris_raw):
        """Test a three-way 90/30/30 split."""
        d = split_standardize(iris_raw, test_frac=0.2, seed=0, validation_frac=0.2)
        assert (len(d.train_idx), len(d.val_idx), len(d.test_idx)) == (90, 30, 30)
        assert d.class_counts(d.val_idx) == [10, 10, 10]
        assert not set(d.val_idx) & (set(d.train_idx) | set(d.test_idx))
        np.testing.assert_array_equal(d.validation_y, d.labels[d.val_idx])

    def test_validation_defaults_to_test(self, iris):
        """Test that fitness rows are the test rows without a validation split."""
        np.testing.assert_array_equal(iris.validation_x, iris.test_x)

    def test_no_standardize(self, iris_raw):
        """Test standardize=False keeps raw values."""
        d = split_standardize(iris_raw, standardize=False)
        np.testing.assert_array_equal(d.features, iris_raw.features)
        assert d.feature_means is None

    def test_standardizing_twice_changes_nothing(self, iris):
        """Test that re-splitting standardized data with the same seed is a no-op."""
        again = split_standardize(iris, test_frac=0.2, seed=0)
        np.testing.assert_array_equal(again.train_idx, iris.train_idx)
        np.testing.assert_allclose(again.features, iris.features, atol=1e-12)
        np.testing.assert_allclose(again.feature_means, 0.0, atol=1e-12)
        np.testing.assert_allclose(again.feature_stds, 1.0, atol=1e-12)

    @pytest.mark.parametrize("test_frac", [0.1, 0.2, 0.25, 0.33])
    def test_class_ratios_within_one_row(self, test_frac):
        """Test that each class gets its proportional share of the split, off by under one row."""
        counts = [50, 30, 17, 3]
        labels = np.repeat(np.arange(4), counts)
        d = Dataset("skewed", np.arange(200.0).reshape(100, 2), labels, 4)
        for seed in range(5):
            split = split_standardize(d, test_frac=test_frac, seed=seed, standardize=False)
            n_test = len(split.test_idx)
            for c, (n_train_c, n_test_c) in enumerate(
                zip(split.class_counts(split.train_idx), split.class_counts(split.test_idx))
            ):
                assert abs(n_test_c - n_test * counts[c] / 100) < 1
                assert abs(n_train_c - (100 - n_test) * counts[c] / 100) < 1

    def test_singleton_class(self):
        """Test that a class with one row cannot be stratified."""
        d = Dataset("tiny", np.arange(10.0).reshape(5, 2), np.array([0, 0, 1, 1, 2]), 3, class_names=["a", "b", "c"])
        with pytest.raises(StratificationError, match="'c'"):
            split_standardize(d)

    def test_bad_fractions(self, iris_raw):
        """Test fractions outside their ranges."""
        with pytest.raises(ConfigError):
            split_standardize(iris_raw, test_frac=0.0)
        with pytest.raises(ConfigError):
            split_standardize(iris_raw, test_frac=0.2, validation_frac=0.9)


class TestCsv:
    """Tests for schema-driven CSV loading."""

    def test_header_mismatch(self, temp_dir):
        """Test a header that does not match the schema."""
        path = write_text(temp_dir, "bad.csv", ["a,b,c,d,species", "5.1,3.5,1.4,0.2,setosa"])
        with pytest.raises(ParseError, match="line 1:") as info:
            load_csv(path, builtin_schema("iris"))
        assert info.value.line == 1

    def test_field_count(self, temp_dir):
        """Test a short row."""
        path = write_text(temp_dir, "bad.csv", [IRIS_HEADER, "5.1,3.5,1.4,0.2,setosa", "5.1,3.5,1.4"])
        with pytest.raises(ParseError, match="line 3: expected 5 fields"):
            load_csv(path, builtin_schema("iris"))

    def test_non_numeric(self, temp_dir):
        """Test a text value in a numeric column."""
        path = write_text(temp_dir, "bad.csv", [IRIS_HEADER, "5.1,wide,1.4,0.2,setosa"])
        with pytest.raises(ParseError, match="line 2: column 'sepal_width': non-numeric"):
            load_csv(path, builtin_schema("iris"))

    def test_unknown_label(self, temp_dir):
        """Test a class label outside the declared levels."""
        path = write_text(temp_dir, "bad.csv", [IRIS_HEADER, "5.1,3.5,1.4,0.2,rose"])
        with pytest.raises(ParseError, match="unknown class label"):
            load_csv(path, builtin_schema("iris"))

    def test_no_rows(self, temp_dir):
        """Test a file with only a header."""
        path = write_text(temp_dir, "empty.csv", [IRIS_HEADER])
        with pytest.raises(FormatError, match="no data rows"):
            load_csv(path, builtin_schema("iris"))

    def test_blank_lines_skipped(self, temp_dir):
        """Test that blank lines are ignored."""
        path = write_text(temp_dir, "ok.csv", [IRIS_HEADER, "", "5.1,3.5,1.4,0.2,setosa", "", "6.0,3.0,4.5,1.5,versicolor"])
        d = load_csv(path, builtin_schema("iris"))
        assert d.n_rows == 2
        assert list(d.labels) == [0, 1]

    def test_column_encodings(self, temp_dir):
        """Test ignore, one-hot, ordinal and integer-label columns."""
        schema_path = write_text(temp_dir, "toy.yaml", [
            "name: toy",
            "label: cls",
            "columns:",
            "  - {name: id, type: ignore}",
            "  - {name: color, type: onehot, levels: [r, g, b]}",
            "  - {name: size, type: ordinal, levels: [S, M, L]}",
            "  - {name: w, type: numeric}",
            "  - {name: cls, type: label}",
        ])
        csv_path = write_text(temp_dir, "toy.csv", ["id,color,size,w,cls", "7,g,L,0.5,1", "8,r,S,-2,0"])
        schema = load_schema(schema_path)
        d = load_csv(csv_path, schema)
        np.testing.assert_array_equal(d.features, [[0, 1, 0, 2, 0.5], [1, 0, 0, 0, -2]])
        assert d.feature_names == ["color=r", "color=g", "color=b", "size", "w"]
        assert d.class_names == ["0", "1"]
        assert list(d.labels) == [1, 0]

    def test_unknown_level(self, temp_dir):
        """Test a categorical value outside its levels."""
        schema = builtin_schema("heart")
        path = write_text(temp_dir, "heart.csv", [HEART_HEADER, HEART_ROWS[0].replace(",ATA,", ",XYZ,")])
        with pytest.raises(ParseError, match="unknown level 'XYZ'"):
            load_csv(path, schema)


class TestSchemas:
    """Tests for YAML schemas."""

    def test_builtin_widths(self):
        """Test feature counts of the packaged schemas."""
        assert len(builtin_schema("iris").feature_names()) == 4
        assert len(builtin_schema("breast_cancer").feature_names()) == 30
        assert len(builtin_schema("heart").feature_names()) == 18

    def test_breast_cancer_layout(self):
        """Test headerless wdbc layout with M and B labels."""
        schema = builtin_schema("breast_cancer")
        assert not schema.header
        assert schema.label_column.levels == ["M", "B"]

    def test_unknown_builtin(self):
        """Test a dataset without a packaged schema."""
        with pytest.raises(ConfigError):
            builtin_schema("wine")

    def test_invalid_schemas(self, temp_dir):
        """Test missing columns, a missing label and bad YAML."""
        cases = {
            "nocols.yaml": ["name: x", "label: y"],
            "nolabel.yaml": ["label: y", "columns:", "  - {name: a, type: numeric}"],
            "badtype.yaml": ["label: y", "columns:", "  - {name: a, type: text}", "  - {name: y, type: label}"],
            "broken.yaml": ["columns: [unclosed"],
        }
        for name, lines in cases.items():
            with pytest.raises(FormatError):
                load_schema(write_text(temp_dir, name, lines))

    def test_heart_features(self, temp_dir):
        """Test that heart rows encode to 18 features."""
        path = write_text(temp_dir, "heart.csv", [HEART_HEADER, *HEART_ROWS])
        d = load_csv(path, builtin_schema("heart"))
        assert d.features.shape == (12, 18)
        assert d.class_counts() == [7, 5]
        # Sex M, ChestPainType ATA
        np.testing.assert_array_equal(d.features[0, :6], [40, 1, 0, 1, 0, 0])


class TestIdx:
    """Tests for IDX readers."""

    def test_read_images_and_labels(self, mnist_files):
        """Test shapes and values."""
        image_path, label_path, images, labels = mnist_files
        np.testing.assert_array_equal(read_idx_images(image_path), images)
        np.testing.assert_array_equal(read_idx_labels(label_path), labels)

    def test_gzip(self, temp_dir):
        """Test gzip-compressed files."""
        labels = np.array([3, 1, 4, 1, 5])
        path = Path(temp_dir) / "labels.idx.gz"
        write_idx_labels(path, labels, compress=True)
        np.testing.assert_array_equal(read_idx_labels(path), labels)

    def test_bad_magic(self, mnist_files):
        """Test swapped image and label files."""
        image_path, label_path, _, _ = mnist_files
        with pytest.raises(FormatError, match="bad image magic"):
            read_idx_images(label_path)
        with pytest.raises(FormatError, match="bad label magic"):
            read_idx_labels(image_path)

    def test_truncated(self, temp_dir, mnist_files):
        """Test files shorter than their headers claim."""
        image_path, _, _, _ = mnist_files
        cut = Path(temp_dir) / "cut.idx"
        cut.write_bytes(image_path.read_bytes()[:-5])
        with pytest.raises(FormatError, match="pixel bytes"):
            read_idx_images(cut)
        cut.write_bytes(b"\x00\x00")
        with pytest.raises(FormatError, match="truncated"):
            read_idx_labels(cut)


class TestMnistSubset:
    """Tests for load_mnist_subset."""

    def test_digit_filter(self, mnist_files):
        """Test relabeling, scaling and the patch token mode."""
        image_path, label_path, images, labels = mnist_files
        d = load_mnist_subset(image_path, label_path, seed=0)
        assert d.n_rows == 10
        assert d.n_features == 64
        assert d.class_counts() == [4, 3, 3]
        assert d.token_mode == "patch"
        assert d.features.min() >= 0.0 and d.features.max() <= 1.0
        np.testing.assert_allclose(d.features[0], images[0].ravel() / 255.0)
        assert d.class_names == ["1", "2", "3"]

    def test_split(self, mnist_files):
        """Test the stratified split of a single file."""
        image_path, label_path, _, _ = mnist_files
        d = load_mnist_subset(image_path, label_path, seed=0)
        assert len(d.test_idx) == 2
        assert len(d.train_idx) == 8
        assert d.class_counts(d.test_idx) == [1, 1, 0]

    def test_separate_test_files(self, temp_dir, mnist_files):
        """Test a separate test pair and a train subsample."""
        image_path, label_path, images, labels = mnist_files
        test_images = Path(temp_dir) / "t_images.idx"
        test_labels = Path(temp_dir) / "t_labels.idx"
        write_idx_images(test_images, images[:6])
        write_idx_labels(test_labels, labels[:6])
        d = load_mnist_subset(
            image_path, label_path, seed=1,
            test_image_path=test_images, test_label_path=test_labels, train_subsample=4,
        )
        assert len(d.test_idx) == 6
        assert len(d.train_idx) == 4
        assert d.n_rows == 16

    def test_default_test_subsample(self, temp_dir):
        """Test the 150-image test subsample and its per-class rounding."""
        gen = np.random.default_rng(1)
        labels = gen.permutation(np.repeat([1, 2, 3, 7], [400, 350, 250, 20]))
        image_path = Path(temp_dir) / "big_images.idx"
        label_path = Path(temp_dir) / "big_labels.idx"
        write_idx_images(image_path, np.zeros((len(labels), 4, 4)))
        write_idx_labels(label_path, labels)

        d = load_mnist_subset(image_path, label_path, seed=0)
        assert d.class_counts(d.train_idx) == [320, 280, 200]
        assert len(d.test_idx) == 150
        assert allocate([80, 70, 50], 150) == [60, 53, 37]
        assert d.class_counts(d.test_idx) == [60, 53, 37]
        assert not set(d.test_idx) & set(d.train_idx)

        explicit = load_mnist_subset(image_path, label_path, seed=0, test_subsample=150)
        np.testing.assert_array_equal(explicit.test_idx, d.test_idx)
        full = load_mnist_subset(image_path, label_path, seed=0, test_subsample=None)
        assert full.class_counts(full.test_idx) == [80, 70, 50]

    def test_bad_digits(self, mnist_files):
        """Test repeated digits."""
        image_path, label_path, _, _ = mnist_files
        with pytest.raises(ConfigError):
            load_mnist_subset(image_path, label_path, digits=(1, 1))

    def test_unpaired_test_files(self, mnist_files):
        """Test a test image file without labels."""
        image_path, label_path, _, _ = mnist_files
        with pytest.raises(ConfigError):
            load_mnist_subset(image_path, label_path, test_image_path=image_path)


class TestDataSource:
    """Tests for DataSource and load_source."""

    def test_defaults(self):
        """Test that iris needs nothing else."""
        assert DataSource().validate() == []

    def test_missing_paths(self):
        """Test datasets that need files."""
        assert DataSource(name="heart").validate()
        assert DataSource(name="mnist").validate()
        assert DataSource(name="wine").validate()

    def test_bad_values(self):
        """Test fractions and subsample sizes."""
        errors = DataSource(test_frac=0.0, train_subsample=0).validate()
        assert len(errors) == 2

    def test_load_iris(self):
        """Test the default source."""
        d = load_source(DataSource(), seed=0)
        assert (len(d.train_idx), len(d.test_idx)) == (120, 30)

    def test_load_heart_csv(self, temp_dir):
        """Test a CSV source with the packaged schema."""
        path = write_text(temp_dir, "heart.csv", [HEART_HEADER, *HEART_ROWS])
        d = load_source(DataSource(name="heart", path=str(path), test_frac=0.25), seed=0)
        assert d.n_features == 18
        assert len(d.test_idx) == 3
        assert len(d.train_idx) == 9

    def test_load_mnist(self, mnist_files):
        """Test an IDX source with a validation split."""
        image_path, label_path, _, _ = mnist_files
        src = DataSource(name="mnist", mnist_images=str(image_path), mnist_labels=str(label_path), validation_frac=0.2)
        d = load_source(src, seed=0)
        assert len(d.val_idx) == 2
        assert len(d.train_idx) == 6
        assert not set(d.val_idx) & set(d.train_idx)

    def test_invalid_source(self):
        """Test that load_source rejects invalid sources."""
        with pytest.raises(ConfigError):
            load_source(DataSource(name="mnist"))
