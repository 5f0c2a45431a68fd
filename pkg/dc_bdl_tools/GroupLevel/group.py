import logging
import os
from datetime import datetime

from dc_bdl_tools import experiment
from dc_bdl_tools.GroupLevel import Analyses as GroupAnalyses
from dc_bdl_tools.ExperimentLevel import Analyses as ExperimentAnalyses
from dc_bdl_tools.Utils.likelihoods import MODEL_TAGS


def setup_logger(fname, basedir):
    """
    This creates the logger to write all error messages when processing experiments.
    """
    if not os.path.exists(basedir):
        os.makedirs(basedir)
    log_str = '%s/%s' % (basedir, fname + '_' + datetime.now().strftime('%H_%M_%d_%m_%Y.log'))
    logger = logging.getLogger()
    fhandler = logging.FileHandler(filename=log_str)
    formatter = logging.Formatter('%(asctime)s - %(name)s - %(levelname)s - %(message)s')
    fhandler.setFormatter(formatter)
    logger.addHandler(fhandler)
    logger.setLevel(logging.ERROR)
    return fhandler


def default_log_dir():
    """
    Default log location: DCBDL_BASE_DIR/logs if the environment variable is set, otherwise ./logs. You can set it
    to whatever you want later.
    """
    base_dir = os.environ.get('DCBDL_BASE_DIR') or os.getcwd()
    return os.path.join(base_dir, 'logs')


def _experiment_grid(models, seeds):
    return [(model, seed) for model in models for seed in seeds]


def _group_helper_key(analysis_name):
    return analysis_name.replace('Experiment', 'Group')


class GroupAnalysisPipeline(object):
    """
    Class to run multiple analyses on every (model, seed) experiment of a dataset.
    """

    def __init__(self, analysis_name_list=None, analysis_params_list=None, log_dir=None, dataset='',
                 models=MODEL_TAGS, seeds=(0,)):
        """

        Parameters
        ----------
        analysis_name_list: list of strings
            List of analysis names to run. They should be the name of an ExperimentLevel analysis class.
        analysis_params_list: list of dictionaries
            List of dictionaries of attributes to set for each analysis
        log_dir: str
            Where to write the log file. If not given, will save to default location. See default_log_dir()
        dataset: str
            Name of the dataset shared by all experiments.
        models: list of str
            Model tags to run.
        seeds: list of int
            Seeds to run for every model.

        Notes
        -----
        Use the .run() method to iterate over each experiment.

        After .run() is complete:
            The .experiment_objs attribute will hold the ExperimentAnalysisPipeline of every experiment that
            finished.

            If there is a corresponding GroupLevel.Analysis class for the final ExperimentLevel.Analysis class, the
            .group_helpers attribute will be an instantiated version of that class, built from the final analysis
            of each pipeline. Corresponding GroupLevel classes have the same name as the ExperimentLevel analyses,
            with Experiment replaced by Group.
        """

        if (analysis_name_list is None) or (analysis_params_list is None):
            raise ValueError('Both analysis_name_list and analysis_params_list must be entered.')

        if len(analysis_name_list) != len(analysis_params_list):
            raise ValueError('Both analysis_name_list and analysis_params_list must be the same length.')

        self.analysis_name_list = analysis_name_list
        self.analysis_params_list = analysis_params_list
        self.dataset = dataset
        self.models = list(models)
        self.seeds = list(seeds)

        # place to save the log
        self.log_dir = default_log_dir() if log_dir is None else log_dir

        # list that will hold all the pipelines
        self.experiment_objs = None
        self.group_helpers = None

    def run(self):
        """
        Sets up logging, then hands off the work to process_experiment_pipeline.
        """

        # set up logger to log errors for this run
        fhandler = setup_logger('_'.join(self.analysis_name_list), self.log_dir)
        try:
            self.experiment_objs = self.process_experiment_pipeline()
        finally:
            logging.getLogger().removeHandler(fhandler)
            fhandler.close()

        # add the group class, if exists
        ana_key = _group_helper_key(self.analysis_name_list[-1])
        if ana_key in GroupAnalyses.analysis_dict and self.experiment_objs:
            print('Setting .group_helpers to {} class.'.format(ana_key))
            self.group_helpers = GroupAnalyses.analysis_dict[ana_key]([x.analyses[-1] for x in
                                                                      self.experiment_objs])

    def process_experiment_pipeline(self):
        """
        Actually process the experiments here, and return a list of ExperimentAnalysisPipeline objects.
        """
        experiment_list = []

        for model, seed in _experiment_grid(self.models, self.seeds):

            # copy so every experiment gets its own settings dictionaries
            ana_dicts = [dict(d) for d in self.analysis_params_list]
            this_exp = experiment.ExperimentAnalysisPipeline(self.dataset, model, seed, self.analysis_name_list,
                                                             ana_dicts)

            # a diverged or otherwise failed experiment should not stop the others
            try:
                print('Processing {} - {} - seed {}'.format(self.dataset, model, seed))
                this_exp.run()
                this_exp.unload_data()
                experiment_list.append(this_exp)

            # make sure to log any issues
            except Exception as e:
                print('ERROR PROCESSING %s %s seed %s.' % (self.dataset, model, seed))
                logging.error('ERROR PROCESSING %s %s seed %s' % (self.dataset, model, seed))
                logging.error(e, exc_info=True)

        return experiment_list


class Group(object):
    """
    Class to run a specified analysis on every (model, seed) experiment of a dataset.
    """

    def __init__(self, analysis_name='', log_dir=None, dataset='', models=MODEL_TAGS, seeds=(0,), **kwargs):
        """

        Parameters
        ----------
        analysis_name: str
            The name of analysis to run. It should be the name of an ExperimentLevel analysis class.
        log_dir: str
            Where to write the log file. If not given, will save to default location. See default_log_dir()
        dataset: str
        models: list of str
        seeds: list of int
        kwargs
            Any additional keyword arguments will be set as attributes of the Analysis class.
        """

        # make sure we have a valid analyis
        if analysis_name not in ExperimentAnalyses.analysis_dict:
            raise ValueError('Please enter a valid analysis name: \n{}'.format(
                '\n'.join(list(ExperimentAnalyses.analysis_dict.keys()))))

        self.analysis_name = analysis_name
        self.dataset = dataset
        self.models = list(models)
        self.seeds = list(seeds)

        # list that will hold all the analysis objects
        self.experiment_objs = None

        # place to save the log
        self.log_dir = default_log_dir() if log_dir is None else log_dir

        # kwargs to set on the experiment analysis objects
        self.kwargs = kwargs

        # this will be used to give easy access to group analsyis specific function, such as custom plotting.
        self.group_helpers = None

    def run(self):
        """
        Sets up logging, then hands off the work to process_experiments.
        """
        fhandler = setup_logger(self.analysis_name, self.log_dir)
        try:
            experiment_list = self.process_experiments()
        finally:
            logging.getLogger().removeHandler(fhandler)
            fhandler.close()

        # save the list of experiment results
        self.experiment_objs = experiment_list

        # add the group class, if exists
        ana_key = _group_helper_key(self.analysis_name)
        if ana_key in GroupAnalyses.analysis_dict and experiment_list:
            print('Setting .group_helpers to {} class.'.format(ana_key))
            self.group_helpers = GroupAnalyses.analysis_dict[ana_key](experiment_list)

    def process_experiments(self):
        """
        Actually process the experiments here, and return a list of analysis objects with the results.
        """
        experiment_list = []

        for model, seed in _experiment_grid(self.models, self.seeds):
            this_exp = experiment.create_experiment(self.dataset, model, seed, analysis_name=self.analysis_name)

            # set all the attributes
            for attr in self.kwargs.items():
                setattr(this_exp, attr[0], attr[1])

            try:
                print('Processing {} - {} - seed {}'.format(self.dataset, model, seed))
                this_exp.run()
                this_exp.unload_data()
                experiment_list.append(this_exp)

            # make sure to log any issues
            except Exception as e:
                print('ERROR PROCESSING %s %s seed %s.' % (self.dataset, model, seed))
                logging.error('ERROR PROCESSING %s %s seed %s' % (self.dataset, model, seed))
                logging.error(e, exc_info=True)

        return experiment_list
